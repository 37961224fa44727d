"""Affine-invariant Riemannian geometry of HPD matrices.

Includes the geodesic, distance and exponential map, and the Riemannian
(Karcher) mean and median computed by Riemannian gradient descent with a
backtracking step size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConvergenceError, DimensionError
from .linalg import (
    _ct,
    _check_same_dim,
    _symmetrize,
    as_hermitian,
    as_hpd,
    expm,
    invm,
    sqrt_and_invsqrt,
)

__all__ = [
    "DescentConfig",
    "SolverInfo",
    "airm_inner",
    "geodesic",
    "riemannian_distance",
    "exp_map",
    "rd_objective",
    "rd_mean",
    "rd_median",
]

# Median terms this close to the iterate are dropped for one iteration.
COINCIDENCE_FLOOR = 1e-12
_MAX_HALVINGS = 50
_ROUNDING = 1e-14


@dataclass(frozen=True)
class DescentConfig:
    """Step and stopping rules for Riemannian gradient descent."""

    initial_step: float = 0.5
    tolerance: float = 1e-3
    max_iterations: int = 200
    backtracking_factor: float = 0.5

    def __post_init__(self):
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 < self.backtracking_factor < 1:
            raise ValueError("backtracking_factor must lie in (0, 1)")


MEAN_DEFAULTS = DescentConfig(initial_step=0.5)
MEDIAN_DEFAULTS = DescentConfig(initial_step=1.0)


@dataclass
class SolverInfo:
    """Diagnostics returned alongside an iterative estimate."""

    iterations: int
    residual: float
    converged: bool
    objective: list = field(default_factory=list)


def airm_inner(p, a, b):
    """Affine-invariant inner product ``tr(P^-1 A P^-1 B)`` at ``P``."""
    _check_same_dim(p, a, b)
    p = as_hpd(p)
    pinv = invm(p)
    return float(np.real(np.trace(pinv @ np.asarray(a) @ pinv @ np.asarray(b))))


def _log_whitened(p0, p1):
    s, si = sqrt_and_invsqrt(p0)
    w, v = np.linalg.eigh(_symmetrize(si @ p1 @ si))
    return s, v, np.log(w)


def geodesic(p0, p1, t):
    """Point at parameter ``t`` on the geodesic from ``p0`` to ``p1``."""
    _check_same_dim(p0, p1)
    p0, p1 = as_hpd(p0), as_hpd(p1)
    s, v, lw = _log_whitened(p0, p1)
    return _symmetrize(s @ ((v * np.exp(t * lw)[None, :]) @ _ct(v)) @ s)


def riemannian_distance(p0, p1):
    """Geodesic distance ``||Log(P0^-1/2 P1 P0^-1/2)||_F``."""
    _check_same_dim(p0, p1)
    p0, p1 = as_hpd(p0), as_hpd(p1)
    _, _, lw = _log_whitened(p0, p1)
    return float(np.sqrt(np.sum(lw**2)))


def exp_map(p, v):
    """Endpoint ``P^1/2 exp(P^-1/2 V P^-1/2) P^1/2`` of the geodesic with velocity ``V``."""
    _check_same_dim(p, v)
    p, v = as_hpd(p), as_hermitian(v)
    s, si = sqrt_and_invsqrt(p)
    return _symmetrize(s @ expm(_symmetrize(si @ v @ si)) @ s)


def _distances(r, inv_samples):
    """Distances from ``r`` to each sample and the whitened logs.

    Returns the logs ``Log(R^1/2 R_i^-1 R^1/2)`` whose eigenvalues are minus
    those of ``Log(R^-1/2 R_i R^-1/2)``, so the distances agree.
    """
    s, _ = sqrt_and_invsqrt(r)
    w, v = np.linalg.eigh(_symmetrize(s @ inv_samples @ s))
    lw = np.log(w)
    logs = (v * lw[..., None, :]) @ _ct(v)
    return np.sqrt(np.sum(lw**2, axis=-1)), logs, s


def _prepare(samples, weights):
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise ValueError("need a non-empty list of HPD matrices")
    if samples.shape[1] != samples.shape[2]:
        raise DimensionError("samples must be square")
    if weights is None:
        weights = np.full(samples.shape[0], 1.0 / samples.shape[0])
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (samples.shape[0],) or np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per sample, not all zero")
        weights = weights / weights.sum()
    return samples, weights


def rd_objective(r, samples, median=False, weights=None):
    """Weighted mean of squared (or first-power) Riemannian distances."""
    samples, weights = _prepare(samples, weights)
    d, _, _ = _distances(np.asarray(r, dtype=complex), invm(samples))
    return float(np.sum(weights * (d if median else d**2)))


def _vertex_optimal(r, inv_samples, weights):
    """Whether a sample-coincident ``r`` minimizes the weighted distance sum.

    Kuhn's vertex test: the whitened gradient of the other terms must lie in
    the subdifferential ball of the coincident ones, whose radius is their
    total weight.
    """
    d, logs, _ = _distances(r, inv_samples)
    on = d < COINCIDENCE_FLOOR
    coef = np.where(on, 0.0, weights / np.where(on, 1.0, d))
    return bool(np.linalg.norm(np.einsum("i,ijk->jk", coef, logs)) <= np.sum(weights[on]))


def _evaluate(r, inv_samples, weights, median):
    d, logs, s = _distances(r, inv_samples)
    if median:
        keep = d >= COINCIDENCE_FLOOR
        coef = np.where(keep, weights / np.where(keep, d, 1.0), 0.0)
        obj = float(np.sum(weights * d))
        # Weiszfeld scale: the step at which the update is a weighted
        # geodesic average of the samples
        scale = 1.0 / coef.sum() if coef.sum() > 0 else 1.0
    else:
        coef = 2.0 * weights
        obj = float(np.sum(weights * d**2))
        scale = 1.0
    # whitened Riemannian gradient R^-1/2 grad G R^-1/2
    grad = np.einsum("i,ijk->jk", coef, logs)
    return obj, _symmetrize(grad), s, scale, d


def _descend(samples, config, weights, median, init):
    samples, weights = _prepare(samples, weights)
    inv_samples = invm(samples)
    if init is None:
        r = _symmetrize(np.einsum("i,ijk->jk", weights, samples))
    else:
        r = as_hpd(init)
    obj, grad, s, scale, d = _evaluate(r, inv_samples, weights, median)
    gnorm = float(np.linalg.norm(grad))
    info = SolverInfo(iterations=0, residual=gnorm, converged=False, objective=[obj])
    for it in range(1, config.max_iterations + 1):
        if gnorm < config.tolerance:
            info.converged = True
            break
        if median:
            # descent only creeps towards a sample that is the median; jump there
            k = int(np.argmin(d))
            if _vertex_optimal(samples[k], inv_samples, weights):
                v_obj = _evaluate(samples[k], inv_samples, weights, median)[0]
                if v_obj <= obj:
                    r, gnorm = samples[k].copy(), 0.0
                    info.iterations, info.residual = it, gnorm
                    info.objective.append(v_obj)
                    break
        eta = config.initial_step * scale
        for _ in range(_MAX_HALVINGS):
            cand = _symmetrize(s @ expm(-eta * grad) @ s)
            c_obj, c_grad, c_s, c_scale, c_d = _evaluate(cand, inv_samples, weights, median)
            if c_obj < obj:
                break
            # near the optimum the decrease drops below rounding; accept a
            # step that keeps the objective within rounding and shrinks the gradient
            if c_obj <= obj + _ROUNDING * abs(obj) and np.linalg.norm(c_grad) < gnorm:
                break
            eta *= config.backtracking_factor
        else:
            # no decrease available at working precision
            break
        r, obj, grad, s, scale, d = cand, c_obj, c_grad, c_s, c_scale, c_d
        gnorm = float(np.linalg.norm(grad))
        info.iterations = it
        info.residual = gnorm
        info.objective.append(obj)
    if gnorm < config.tolerance:
        info.converged = True
    if not info.converged:
        kind = "median" if median else "mean"
        raise ConvergenceError(
            f"RD {kind} stopped after {info.iterations} iterations with gradient norm "
            f"{gnorm:.3e} (tolerance {config.tolerance:g})",
            iterate=r,
            residual=gnorm,
        )
    return r, info


def rd_mean(samples, config=None, weights=None, init=None, return_info=False):
    """Riemannian (Karcher) mean by Riemannian gradient descent.

    Iterates ``R <- R^1/2 exp(-2 eta sum_i w_i Log(R^1/2 R_i^-1 R^1/2)) R^1/2``
    from the arithmetic mean, halving ``eta`` until the objective decreases.
    Stops when the Riemannian gradient norm drops below ``config.tolerance``.

    Parameters
    ----------
    samples : array_like, shape (m, N, N)
        HPD matrices.
    config : DescentConfig, optional
        Defaults to ``initial_step=0.5``.
    weights : array_like, shape (m,), optional
        Nonnegative sample weights, normalized internally (uniform by default).
    init : array_like, optional
        Starting point; the weighted arithmetic mean otherwise.
    return_info : bool
        Also return a :class:`SolverInfo`.

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above tolerance after
        ``max_iterations`` steps, or no descent step can be found.
    """
    r, info = _descend(samples, config or MEAN_DEFAULTS, weights, False, init)
    return (r, info) if return_info else r


def rd_median(samples, config=None, weights=None, init=None, return_info=False):
    """Riemannian median by Riemannian gradient descent.

    Same scheme as :func:`rd_mean` with gradient
    ``sum_i w_i Log(R^1/2 R_i^-1 R^1/2) / d(R, R_i)``; samples within
    ``1e-12`` of the iterate are left out of that iteration's sum.

    The trial step is ``config.initial_step / sum_i (w_i / d(R, R_i))``
    before backtracking.  With the default ``initial_step=1`` the first trial
    is the Riemannian Weiszfeld update.

    Each iteration also checks whether the sample nearest to the iterate is
    itself the median (the gradient of the other terms has whitened norm at
    most its weight).  If so that sample is returned with residual 0, the
    distance from 0 to the subdifferential there.
    """
    r, info = _descend(samples, config or MEDIAN_DEFAULTS, weights, True, init)
    return (r, info) if return_info else r
