"""Command-line driver: ``tbdcfar {detect,robustness,calibrate}``.

Each command resolves a configuration (profile, then ``--config`` file,
then flags), runs the experiment and writes a CSV plus a JSON manifest
into the output directory.  Files appear only once the run has finished.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Errors
are reported as one JSON line on standard error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .clutter import RngStream
from .config import PROFILES, load_config
from .detector import calibrate_thresholds, calibration_trials, estimate_pd_curves, false_alarm_rates
from .exceptions import ConvergenceError, SingularSystemError
from .parallel import WORKERS_ENV, default_workers
from .robustness import influence_curve

log = logging.getLogger("tbdcfar")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DETECTION_COLUMNS = ("detector", "scr_db", "pd", "wilson_lo", "wilson_hi", "gamma", "trials")
ROBUSTNESS_COLUMNS = ("estimator", "n", "mean_influence", "stderr")
CALIBRATION_COLUMNS = (
    "detector", "gamma", "pfa", "calibration_trials", "verification_rate", "verification_trials",
)

# RNG stream ids; detect and calibrate share calibration draws on purpose
STREAM_DETECTION = 0
STREAM_ROBUSTNESS = 1


class ConfigError(Exception):
    pass


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _write_atomic(files):
    """Write ``{path: text}`` through temporary files renamed into place."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)


def _manifest(command, cfg, runtime, profile, extra=None):
    data = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "profile": profile,
        "description": cfg.description,
        "paper_scale": cfg.is_paper_scale(),
        "runtime_s": round(runtime, 3),
        "config": cfg.model_dump(mode="json"),
    }
    data.update(extra or {})
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def run_detection(cfg, workers=1):
    """Calibrate thresholds and estimate Pd curves; returns the CSV text."""
    det = cfg.detection
    scene = cfg.scene.build()
    rng = RngStream(cfg.seed, STREAM_DETECTION)
    specs = det.specs()
    gammas = calibrate_thresholds(specs, scene, det.pfa, rng, workers=workers,
                                  trials=det.calibration_trials)
    curves = estimate_pd_curves(specs, scene, gammas, det.scr_grid_db, det.trials, rng,
                                workers=workers, pfa=det.pfa)
    rows = []
    for c in curves:
        for k, scr in enumerate(c.scr_grid_db):
            rows.append((c.detector, scr, c.pd[k], c.wilson_lo[k], c.wilson_hi[k],
                         c.threshold, c.trials))
    return _csv_text(DETECTION_COLUMNS, rows)


def run_robustness(cfg, workers=1):
    rob = cfg.robustness
    scene = cfg.scene.build(m=rob.m)
    curves = influence_curve(rob.estimators, scene, rob.m, rob.n_grid, rob.trials,
                             RngStream(cfg.seed, STREAM_ROBUSTNESS), rob.scr_outlier_db, workers)
    rows = []
    for name in rob.estimators:
        c = curves[name]
        rows.extend((name, n, v, s) for n, v, s in zip(c.n_grid, c.mean, c.stderr))
    return _csv_text(ROBUSTNESS_COLUMNS, rows)


def run_calibrate(cfg, workers=1):
    det = cfg.detection
    scene = cfg.scene.build()
    rng = RngStream(cfg.seed, STREAM_DETECTION)
    specs = det.specs()
    k = det.calibration_trials or calibration_trials(det.pfa)
    gammas = calibrate_thresholds(specs, scene, det.pfa, rng, workers=workers, trials=k)
    rates = false_alarm_rates(specs, scene, gammas, det.verification_trials, rng, workers=workers)
    rows = [
        (s.name, float(g), det.pfa, k, float(r), det.verification_trials)
        for s, g, r in zip(specs, gammas, rates)
    ]
    return _csv_text(CALIBRATION_COLUMNS, rows)


COMMANDS = {
    "detect": (run_detection, "detection.csv"),
    "robustness": (run_robustness, "robustness.csv"),
    "calibrate": (run_calibrate, "calibration.csv"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tbdcfar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "detect": "calibrate thresholds and estimate Pd versus SCR",
        "robustness": "influence curves of the covariance estimators",
        "calibrate": "thresholds and their false-alarm rate on an independent batch",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--profile", choices=PROFILES, help="named preset applied before --config")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int,
                       help=f"worker processes (default ${WORKERS_ENV} or CPU count)")
    return parser


def _report(kind, message):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)


def _resolve(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_path"] = str(args.out)
    try:
        cfg = load_config(args.config, args.profile, overrides)
    except ValidationError as exc:
        errs = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise ConfigError(errs) from None
    except (OSError, ValueError) as exc:
        raise ConfigError(exc) from None
    workers = default_workers() if args.workers is None else args.workers
    if workers < 1:
        raise ConfigError("--workers must be at least 1")
    return cfg, workers


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg, workers = _resolve(args)
    except ConfigError as exc:
        _report("config", exc)
        return EXIT_CONFIG
    if cfg.is_paper_scale():
        log.warning("full-scale settings requested; this run may take hours")
    run, filename = COMMANDS[args.command]
    start = time.perf_counter()
    try:
        with np.errstate(all="ignore"):
            text = run(cfg, workers)
    except (ConvergenceError, SingularSystemError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        _report("numerical", f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    runtime = time.perf_counter() - start
    out = Path(cfg.output_path)
    _write_atomic({
        out / filename: text,
        out / f"{Path(filename).stem}.manifest.json": _manifest(
            args.command, cfg, runtime, args.profile, {"workers": workers, "csv": filename}
        ),
    })
    print(out / filename)
    return 0


if __name__ == "__main__":
    sys.exit(main())
