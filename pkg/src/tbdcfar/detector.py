"""Covariance estimation, detection statistics and Monte-Carlo evaluation.

Detectors come in three families: the GLRT and ANMF on the sample
covariance, and the matrix CFAR, which compares the Toeplitz covariance of
the cell under test with a geometric center (mean or median) of the
training-cell covariances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.stats import binomtest

from .airm import MEAN_DEFAULTS, MEDIAN_DEFAULTS, DescentConfig, rd_mean, rd_median, riemannian_distance
from .clutter import RngStream, Scene
from .linalg import _symmetrize, as_hpd
from .parallel import map_trials
from .tbd import DivergenceKind, FixedPointConfig, tbd_mean, tbd_median, tbd_value

__all__ = [
    "DetectorSpec",
    "DetectionCurve",
    "SolverSettings",
    "ALL_DETECTORS",
    "toeplitz_lags",
    "toeplitz_covariance",
    "toeplitz_covariances",
    "scm",
    "glrt_statistic",
    "anmf_statistic",
    "cfar_statistic",
    "cfar_reference",
    "trial_statistics",
    "threshold_from_statistics",
    "calibration_trials",
    "clutter_only_statistics",
    "calibrate_thresholds",
    "calibrate_threshold",
    "false_alarm_rates",
    "estimate_pd_curves",
    "estimate_pd",
    "wilson_interval",
]

FAMILIES = ("GLRT", "ANMF", "CFAR")
DISCREPANCIES = ("RD", "TSL", "TLD", "TVN")
CENTERS = ("mean", "median")
MIN_PFA = 1e-7


@dataclass(frozen=True)
class DetectorSpec:
    """Which detector to run.

    ``discrepancy`` and ``center`` are required for the CFAR family and
    forbidden otherwise.  ``DetectorSpec.parse('TLD-median')`` and
    ``DetectorSpec.parse('GLRT')`` build specs from their names.
    """

    family: str
    discrepancy: str | None = None
    center: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown detector family {self.family!r}")
        if self.family == "CFAR":
            if self.discrepancy not in DISCREPANCIES or self.center not in CENTERS:
                raise ValueError(
                    f"CFAR needs discrepancy in {DISCREPANCIES} and center in {CENTERS}"
                )
        elif self.discrepancy is not None or self.center is not None:
            raise ValueError(f"{self.family} takes no discrepancy/center")

    @property
    def name(self):
        if self.family == "CFAR":
            return f"{self.discrepancy}-{self.center}"
        return self.family

    @classmethod
    def parse(cls, name):
        name = name.strip()
        if name.upper() in ("GLRT", "ANMF"):
            return cls(name.upper())
        try:
            disc, center = name.split("-")
        except ValueError:
            raise ValueError(f"cannot parse detector name {name!r}") from None
        return cls("CFAR", disc.upper(), center.lower())


ALL_DETECTORS = tuple(
    [DetectorSpec("GLRT"), DetectorSpec("ANMF")]
    + [DetectorSpec("CFAR", d, c) for d in DISCREPANCIES for c in CENTERS]
)


@dataclass(frozen=True)
class SolverSettings:
    """Iteration settings for every mean/median solver."""

    rd_mean: DescentConfig = MEAN_DEFAULTS
    rd_median: DescentConfig = MEDIAN_DEFAULTS
    fixed_point: FixedPointConfig = field(default_factory=FixedPointConfig)


@dataclass
class DetectionCurve:
    """Estimated detection probability versus SCR for one detector."""

    detector: str
    scr_grid_db: list
    pd: list
    trials: int
    pfa: float
    threshold: float
    wilson_lo: list
    wilson_hi: list

    def __post_init__(self):
        if len(self.pd) != len(self.scr_grid_db):
            raise ValueError("pd and scr grid lengths differ")
        if any(not 0.0 <= p <= 1.0 for p in self.pd):
            raise ValueError("pd values must lie in [0, 1]")


def _load_if_singular(r, scale):
    """Diagonal loading for matrices that fail the relative positivity test."""
    lam = np.linalg.eigvalsh(r)[..., 0]
    bad = lam <= 1e-12 * scale
    if not np.any(bad):
        return r, np.zeros_like(lam)
    eps = np.where(bad, np.maximum(0.0, 1e-8 * scale - lam) + 1e-10 * scale, 0.0)
    n = r.shape[-1]
    return r + eps[..., None, None] * np.eye(n), eps


def toeplitz_lags(x):
    """Biased correlation lags ``r_k = (1/N) sum_{l=0}^{N-1-k} x_l conj(x_{l+k})``."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    return np.stack(
        [np.sum(x[..., : n - k] * np.conj(x[..., k:]), axis=-1) / n for k in range(n)], axis=-1
    )


def toeplitz_covariances(x, return_loading=False):
    """Toeplitz covariance of each row of ``x`` (shape ``(..., N)``).

    ``R[i, j] = r_{i-j}`` below the diagonal and ``conj(r_{j-i})`` above.
    Matrices whose smallest eigenvalue is below ``1e-12 r_0`` receive
    diagonal loading ``max(0, 1e-8 r_0 - lambda_min) + 1e-10 r_0``.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("Toeplitz covariance needs N >= 2")
    r = toeplitz_lags(x)
    r0 = np.real(r[..., 0])
    r[..., 0] = r0
    if np.any(r0 <= 0):
        raise ValueError("zero observation vector: r_0 = 0")
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    vals = r[..., np.abs(lag)]
    mat = np.where(lag >= 0, vals, np.conj(vals))
    mat, eps = _load_if_singular(mat, r0)
    return (mat, eps) if return_loading else mat


def toeplitz_covariance(x, return_loading=False):
    """Toeplitz HPD covariance estimate from one observation vector."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("expected a single observation vector")
    return toeplitz_covariances(x, return_loading=return_loading)


def scm(secondary):
    """Sample covariance ``(1/m) sum_i x_i x_i^H``, loaded when singular."""
    x = np.asarray(secondary, dtype=complex)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("need at least one secondary vector")
    r = _symmetrize(x.T @ x.conj() / x.shape[0])
    scale = np.real(np.trace(r)) / r.shape[-1]
    if scale <= 0:
        raise ValueError("secondary data are all zero")
    r, _ = _load_if_singular(r, scale)
    return r


def glrt_statistic(x, r, s):
    """``|x^H R^-1 s|^2 / (s^H R^-1 s)``."""
    ri_s = np.linalg.solve(r, s)
    return float(np.abs(np.vdot(x, ri_s)) ** 2 / np.real(np.vdot(s, ri_s)))


def anmf_statistic(x, r, s):
    """``|s^H R^-1 x|^2 / ((x^H R^-1 x)(s^H R^-1 s))``, in [0, 1]."""
    x = np.asarray(x)
    if not np.any(x):
        raise ValueError("ANMF is undefined for a zero observation")
    ri_s = np.linalg.solve(r, s)
    ri_x = np.linalg.solve(r, x)
    num = np.abs(np.vdot(s, ri_x)) ** 2
    return float(num / (np.real(np.vdot(x, ri_x)) * np.real(np.vdot(s, ri_s))))


def cfar_statistic(spec, r_g, r_cut):
    """Matrix-CFAR statistic: distance/divergence of the CUT from the reference.

    The TBDs are evaluated as ``delta(R_cut, R_g)``, with the reference in
    the normalizing slot.
    """
    if spec.family != "CFAR":
        raise ValueError("cfar_statistic needs a CFAR spec")
    if spec.discrepancy == "RD":
        return riemannian_distance(r_g, r_cut)
    return tbd_value(spec.discrepancy, r_cut, r_g)


def cfar_reference(spec, training, config=None):
    """Mean or median of training covariances for a CFAR spec.

    ``config`` is a :class:`SolverSettings`, or directly the
    :class:`DescentConfig` / :class:`FixedPointConfig` of the chosen solver.
    """
    if spec.family != "CFAR":
        raise ValueError("cfar_reference needs a CFAR spec")
    training = np.asarray(training, dtype=complex)
    if training.ndim != 3 or training.shape[0] == 0:
        raise ValueError("need a non-empty list of training covariances")
    if isinstance(config, SolverSettings) or config is None:
        settings = config or SolverSettings()
        if spec.discrepancy == "RD":
            config = settings.rd_mean if spec.center == "mean" else settings.rd_median
        else:
            config = settings.fixed_point
    if spec.discrepancy == "RD":
        solver = rd_mean if spec.center == "mean" else rd_median
        return solver(training, config)
    if spec.center == "mean":
        return tbd_mean(spec.discrepancy, training)
    return tbd_median(spec.discrepancy, training, config)


def _references(specs, training, solver):
    need_scm = any(s.family != "CFAR" for s in specs)
    need_cov = any(s.family == "CFAR" for s in specs)
    refs = {}
    if need_scm:
        refs["SCM"] = scm(training)
    if need_cov:
        covs = toeplitz_covariances(training)
        for spec in specs:
            if spec.family == "CFAR":
                refs[spec.name] = cfar_reference(spec, covs, solver)
    return refs


def _cut_statistics(specs, refs, cut, s):
    out = np.empty(len(specs))
    r_cut = None
    for k, spec in enumerate(specs):
        if spec.family == "GLRT":
            out[k] = glrt_statistic(cut, refs["SCM"], s)
        elif spec.family == "ANMF":
            out[k] = anmf_statistic(cut, refs["SCM"], s)
        else:
            if r_cut is None:
                r_cut = toeplitz_covariance(cut)
            out[k] = cfar_statistic(spec, refs[spec.name], r_cut)
    return out


def trial_statistics(specs, scene, training, cut, solver=None):
    """Statistic of every spec for one trial (training cells + CUT vector)."""
    refs = _references(specs, training, solver or SolverSettings())
    return _cut_statistics(specs, refs, cut, scene.steering)


def threshold_from_statistics(stats, pfa):
    """Empirical ``(1 - pfa)`` quantile: the ``ceil(K pfa)``-th largest of ``K`` values."""
    stats = np.asarray(stats, dtype=float)
    if not 0 < pfa < 1:
        raise ValueError("pfa must lie in (0, 1)")
    k = stats.shape[0]
    j = max(1, math.ceil(k * pfa - 1e-9))
    return np.sort(stats, axis=0)[::-1][j - 1]


def calibration_trials(pfa):
    """Number of clutter-only trials ``ceil(100 / pfa)``."""
    if not 0 < pfa < 1:
        raise ValueError("pfa must lie in (0, 1)")
    if pfa < MIN_PFA:
        raise ValueError(f"pfa below {MIN_PFA:g} needs more than 1e9 calibration trials")
    return math.ceil(100.0 / pfa - 1e-9)


# Stream path prefixes keep calibration, verification and Pd draws disjoint.
PHASE_CALIBRATION, PHASE_VERIFICATION, PHASE_DETECTION = 0, 1, 2


def _h0_trial(i, specs, scene, rng, solver, phase):
    gen = rng.generator(phase, i)
    training, cut = scene.draw_trial(gen)
    return trial_statistics(specs, scene, training, cut, solver)


def clutter_only_statistics(specs, scene, rng, trials, solver=None, workers=1,
                            phase=PHASE_CALIBRATION):
    """Statistics of ``trials`` H0 trials, shape ``(trials, len(specs))``."""
    fn = partial(_h0_trial, specs=tuple(specs), scene=scene, rng=rng,
                 solver=solver or SolverSettings(), phase=phase)
    return np.array(map_trials(fn, trials, workers)).reshape(trials, len(specs))


def calibrate_thresholds(specs, scene, pfa, rng, solver=None, workers=1, trials=None):
    """Thresholds for several detectors from one shared batch of H0 trials."""
    k = trials or calibration_trials(pfa)
    stats = clutter_only_statistics(specs, scene, rng, k, solver, workers, PHASE_CALIBRATION)
    return threshold_from_statistics(stats, pfa)


def calibrate_threshold(spec, scene, pfa, rng, solver=None, workers=1, trials=None):
    """Threshold ``gamma`` with clutter-only exceedance rate ``pfa``.

    Runs ``ceil(100/pfa)`` H0 trials (unless ``trials`` is given) and returns
    the ``ceil(K pfa)``-th largest statistic.
    """
    return float(calibrate_thresholds([spec], scene, pfa, rng, solver, workers, trials)[0])


def false_alarm_rates(specs, scene, gammas, trials, rng, solver=None, workers=1):
    """Exceedance rate of each detector on an independent H0 batch."""
    stats = clutter_only_statistics(specs, scene, rng, trials, solver, workers, PHASE_VERIFICATION)
    return np.mean(stats > np.asarray(gammas)[None, :], axis=0)


def _h1_trial(i, specs, scene, rng, solver, scr_grid_db):
    # the same clutter and target phase are reused at every SCR point
    training, _ = scene.draw_trial(rng.generator(PHASE_DETECTION, i))
    refs = _references(specs, training, solver)
    out = np.empty((len(scr_grid_db), len(specs)))
    for j, scr in enumerate(scr_grid_db):
        _, cut = scene.draw_trial(rng.generator(PHASE_DETECTION, i), scr_db=scr)
        out[j] = _cut_statistics(specs, refs, cut, scene.steering)
    return out


def wilson_interval(count, trials, confidence=0.95):
    ci = binomtest(int(count), int(trials)).proportion_ci(confidence_level=confidence,
                                                          method="wilson")
    return float(ci.low), float(ci.high)


def estimate_pd_curves(specs, scene, gammas, scr_grid_db, trials, rng, solver=None,
                       workers=1, pfa=float("nan")):
    """Detection curves for several detectors sharing the same H1 trials."""
    if trials < 1:
        raise ValueError("trials must be positive")
    scr_grid_db = [float(v) for v in scr_grid_db]
    gammas = np.asarray(gammas, dtype=float).reshape(len(specs))
    fn = partial(_h1_trial, specs=tuple(specs), scene=scene, rng=rng,
                 solver=solver or SolverSettings(), scr_grid_db=scr_grid_db)
    stats = np.array(map_trials(fn, trials, workers))  # (trials, n_scr, n_specs)
    counts = np.sum(stats > gammas[None, None, :], axis=0)
    curves = []
    for k, spec in enumerate(specs):
        ci = [wilson_interval(c, trials) for c in counts[:, k]]
        curves.append(
            DetectionCurve(
                detector=spec.name,
                scr_grid_db=scr_grid_db,
                pd=[float(c) / trials for c in counts[:, k]],
                trials=trials,
                pfa=pfa,
                threshold=float(gammas[k]),
                wilson_lo=[lo for lo, _ in ci],
                wilson_hi=[hi for _, hi in ci],
            )
        )
    return curves


def estimate_pd(spec, scene, gamma, scr_grid_db, trials, rng, solver=None, workers=1,
                pfa=float("nan")):
    """Detection probability of one detector at each SCR (dB) with Wilson 95% bounds."""
    return estimate_pd_curves([spec], scene, [gamma], scr_grid_db, trials, rng, solver,
                              workers, pfa)[0]
