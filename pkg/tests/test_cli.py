import csv
import json
import subprocess
import sys

import pytest

from tbdcfar import __version__, cli
from tbdcfar.config import PROFILES, ExperimentConfig, load_config, load_profile
from tbdcfar.exceptions import ConvergenceError

SMALL = """
[detection]
detectors = ["GLRT", "ANMF", "TLD-median", "RD-mean"]
pfa = 0.1
calibration_trials = 100
trials = 20
verification_trials = 100
scr_grid_db = [0.0, 10.0, 20.0]

[robustness]
estimators = ["TSL-mean", "TSL-median", "SCM"]
m = 10
n_grid = [2, 4]
trials = 30

[scene]
n = 4
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _run(tmp_path, command, text=SMALL, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_detect_writes_csv_and_manifest(tmp_path):
    code, out = _run(tmp_path, "detect", SMALL, "--seed", "7", "--workers", "1")
    assert code == 0
    rows = _rows(out / "detection.csv")
    assert tuple(rows[0]) == cli.DETECTION_COLUMNS
    assert len(rows) == 1 + 4 * 3
    for row in rows[1:]:
        pd, lo, hi = float(row[2]), float(row[3]), float(row[4])
        assert lo <= pd <= hi and int(row[6]) == 20
    manifest = json.loads((out / "detection.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["version"] == __version__
    assert manifest["config"]["detection"]["pfa"] == 0.1
    assert not list(out.glob("*.tmp"))


def test_detect_is_byte_identical(tmp_path):
    _, out = _run(tmp_path, "detect", SMALL, "--workers", "1")
    first = (out / "detection.csv").read_bytes()
    _, out = _run(tmp_path, "detect", SMALL, "--workers", "2")
    assert (out / "detection.csv").read_bytes() == first


def test_manifest_alone_reproduces_run(tmp_path):
    _, out = _run(tmp_path, "detect")
    manifest = json.loads((out / "detection.manifest.json").read_text())
    cfg = ExperimentConfig.model_validate(manifest["config"])
    assert cli.run_detection(cfg) == (out / "detection.csv").read_text()


def test_robustness_csv(tmp_path):
    code, out = _run(tmp_path, "robustness")
    assert code == 0
    rows = _rows(out / "robustness.csv")
    assert tuple(rows[0]) == cli.ROBUSTNESS_COLUMNS
    assert [r[0] for r in rows[1:]] == ["TSL-mean"] * 2 + ["TSL-median"] * 2 + ["SCM"] * 2
    assert all(float(r[2]) > 0 and float(r[3]) >= 0 for r in rows[1:])


def test_robustness_reseeded_within_three_standard_errors(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL))
    a = list(csv.reader(cli.run_robustness(cfg).splitlines()))[1:]
    b = list(csv.reader(cli.run_robustness(cfg.model_copy(update={"seed": 99})).splitlines()))[1:]
    for ra, rb in zip(a, b):
        se = (float(ra[3]) ** 2 + float(rb[3]) ** 2) ** 0.5
        assert abs(float(ra[2]) - float(rb[2])) <= 3 * se


def test_calibrate_rate(tmp_path):
    text = """
[detection]
detectors = ["GLRT"]
pfa = 0.01
verification_trials = 10000
"""
    code, out = _run(tmp_path, "calibrate", text)
    assert code == 0
    rows = _rows(out / "calibration.csv")
    assert tuple(rows[0]) == cli.CALIBRATION_COLUMNS
    assert int(rows[1][3]) == 10_000
    assert 0.005 <= float(rows[1][4]) <= 0.02


def test_calibrate_is_deterministic(tmp_path):
    _, out = _run(tmp_path, "calibrate", SMALL, "--seed", "3")
    first = _rows(out / "calibration.csv")
    _, out = _run(tmp_path, "calibrate", SMALL, "--seed", "3")
    assert _rows(out / "calibration.csv") == first


@pytest.mark.parametrize("text", [
    "[detection]\ndetectors = []\n",
    "[detection]\npfa = 0.999\n",
    "[detection]\npfa = 0.0\n",
    "[robustness]\nn_grid = [0, 2]\n",
    "[detection]\ndetectors = [\"KL-mean\"]\n",
    "[scene]\nclutter = \"weibull\"\n",
    "unknown_key = 1\n",
    "[scene]\nn = 1\n",
    "not toml at all ===\n",
])
def test_config_errors_exit_2(tmp_path, capsys, text):
    code, out = _run(tmp_path, "detect", text)
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["error"] == "config"
    assert not out.exists()


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["detect", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["error"] == "config"


def test_bad_worker_count(tmp_path):
    code, _ = _run(tmp_path, "detect", SMALL, "--workers", "0")
    assert code == cli.EXIT_CONFIG


def test_numerical_failure_exit_3(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise ConvergenceError("median did not converge", iterate=None, residual=1.0)

    monkeypatch.setattr(cli, "calibrate_thresholds", boom)
    code, out = _run(tmp_path, "calibrate")
    assert code == cli.EXIT_NUMERICAL
    assert json.loads(capsys.readouterr().err)["error"] == "numerical"
    assert not out.exists()


def test_workers_env_default(monkeypatch):
    monkeypatch.setenv("TBDCFAR_WORKERS", "3")
    assert cli.default_workers() == 3


@pytest.mark.parametrize("name", PROFILES)
def test_profiles_load(name):
    cfg = load_profile(name)
    assert cfg.is_paper_scale() == name.startswith("paper")
    assert cfg.description


def test_desk_profiles_match_reduced_scale():
    det = load_profile("desk-gaussian")
    assert (det.scene.n, det.scene.m, det.detection.pfa, det.detection.trials) == (8, 8, 0.01, 500)
    rob = load_profile("desk-robustness")
    assert (rob.scene.n, rob.robustness.m, rob.robustness.trials) == (4, 20, 100)
    assert rob.robustness.n_grid == [2, 4, 6, 8, 10, 12]


def test_config_file_overrides_profile(tmp_path):
    cfg = load_config(_write(tmp_path, "[detection]\ntrials = 5\n"), profile="desk-gaussian")
    assert cfg.detection.trials == 5 and cfg.detection.pfa == 0.01


def test_paper_scale_warning(tmp_path, caplog, monkeypatch):
    monkeypatch.setitem(cli.COMMANDS, "calibrate", (lambda cfg, workers: "x\n", "calibration.csv"))
    code = cli.main(["calibrate", "--profile", "paper-gaussian", "--out", str(tmp_path)])
    assert code == 0
    assert "full-scale" in caplog.text


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "tbdcfar.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
