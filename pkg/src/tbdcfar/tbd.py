"""Total Bregman divergences on HPD matrices, with their means and medians.

Three generators are supported:

========  ====================  ===============
kind      F(Y)                  grad F(Y)
========  ====================  ===============
TSL       ||Y||^2 / 2           Y
TLD       -ln det Y             -Y^-1
TVN       tr(Y Log Y - Y)       Log Y
========  ====================  ===============

and ``delta_F(Y, Z) = (F(Y) - F(Z) - <grad F(Z), Y - Z>) / sqrt(1 + ||grad F(Z)||^2)``.

Means have closed forms: ``grad F`` of the mean is the average of
``grad F(R_i)`` weighted by ``1/sqrt(1 + ||grad F(R_i)||^2)``.  Medians
minimize the average of ``delta_F(R, R_i)^(1/2)`` and are found by the
fixed-point map that additionally divides each weight by
``delta_F(R_t, R_i)^(1/2)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .airm import SolverInfo
from .exceptions import ConvergenceError, DimensionError
from .linalg import _check_same_dim, _symmetrize, as_hpd, expm, invm, logm

__all__ = [
    "DivergenceKind",
    "FixedPointConfig",
    "tbd_generator",
    "tbd_value",
    "tbd_gradient",
    "tbd_mean",
    "tbd_median",
    "tbd_objective",
    "mean_residual",
    "median_residual",
]


class DivergenceKind(str, enum.Enum):
    TSL = "TSL"
    TLD = "TLD"
    TVN = "TVN"


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-3
    max_iterations: int = 200
    degeneracy_floor: float = 1e-12

    def __post_init__(self):
        if not (self.tolerance > 0 and self.max_iterations > 0 and self.degeneracy_floor > 0):
            raise ValueError("fixed-point settings must all be positive")


def _kind(kind):
    return DivergenceKind(kind.upper() if isinstance(kind, str) else kind)


def _logdet(y):
    w = np.linalg.eigvalsh(y)
    return np.sum(np.log(w), axis=-1)


def tbd_generator(kind, y):
    """Convex generator ``F(Y)``."""
    kind = _kind(kind)
    y = np.asarray(y)
    if kind is DivergenceKind.TSL:
        return 0.5 * np.sum(np.abs(y) ** 2, axis=(-2, -1))
    w = np.linalg.eigvalsh(y)
    if kind is DivergenceKind.TLD:
        return -np.sum(np.log(w), axis=-1)
    return np.sum(w * np.log(w) - w, axis=-1)


def _grad(kind, y):
    if kind is DivergenceKind.TSL:
        return np.array(y, dtype=complex)
    if kind is DivergenceKind.TLD:
        return -invm(y)
    return logm(y)


def _grad_inverse(kind, g):
    """Map a value of ``grad F`` back to its HPD preimage."""
    if kind is DivergenceKind.TSL:
        return _symmetrize(g)
    if kind is DivergenceKind.TLD:
        return invm(_symmetrize(-g))
    return expm(_symmetrize(g))


def tbd_gradient(kind, r):
    """Euclidean gradient ``grad F(R)`` with respect to the Frobenius metric."""
    kind = _kind(kind)
    return _grad(kind, as_hpd(r))


def _norm(a):
    return np.linalg.norm(a, axis=(-2, -1))


def tbd_value(kind, y, z):
    """Total Bregman divergence ``delta_F(Y, Z)``.

    The second argument is the reference point whose gradient norm sets the
    normalization.  Not symmetric in general.
    """
    kind = _kind(kind)
    _check_same_dim(y, z)
    y, z = as_hpd(y), as_hpd(z)
    n = y.shape[-1]
    if kind is DivergenceKind.TSL:
        num = 0.5 * _norm(y - z) ** 2
        den = np.sqrt(1.0 + _norm(z) ** 2)
    elif kind is DivergenceKind.TLD:
        # eigenvalues of Z^-1 Y from the pencil (Y, Z)
        lam = scipy.linalg.eigh(y, z, eigvals_only=True)
        num = np.sum(lam - np.log(lam)) - n
        den = np.sqrt(1.0 + _norm(invm(z)) ** 2)
    else:
        log_y, log_z = logm(y), logm(z)
        num = np.real(np.trace(y @ (log_y - log_z) - y + z))
        den = np.sqrt(1.0 + _norm(log_z) ** 2)
    return float(num / den)


class _SampleCache:
    """Per-sample quantities reused by every fixed-point iteration."""

    def __init__(self, kind, samples):
        self.kind = kind
        self.samples = samples
        self.n = samples.shape[-1]
        self.grads = _grad(kind, samples)
        self.denom = np.sqrt(1.0 + _norm(self.grads) ** 2)
        if kind is DivergenceKind.TLD:
            self.logdet = _logdet(samples)
        elif kind is DivergenceKind.TVN:
            self.trace = np.real(np.trace(samples, axis1=-2, axis2=-1))

    def divergences(self, r):
        """``delta_F(R, R_i)`` for every sample."""
        if self.kind is DivergenceKind.TSL:
            num = 0.5 * _norm(r - self.samples) ** 2
        elif self.kind is DivergenceKind.TLD:
            # ln det(R_i R^-1) + tr(R_i^-1 R) - N, with R_i^-1 = -grad
            tr = np.real(np.einsum("kij,ji->k", -self.grads, r))
            num = self.logdet - _logdet(r) + tr - self.n
        else:
            # tr(R Log R - R Log R_i - R + R_i)
            log_r = logm(r)
            tr_rlogri = np.real(np.einsum("ij,kji->k", r, self.grads))
            num = np.real(np.trace(r @ log_r)) - tr_rlogri - np.real(np.trace(r)) + self.trace
        return np.maximum(num, 0.0) / self.denom


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


def _weighted_gradient_average(cache, coef):
    return np.einsum("i,ijk->jk", coef / coef.sum(), cache.grads)


def tbd_mean(kind, samples, weights=None):
    """Closed-form TBD mean.

    TSL gives a weighted arithmetic mean, TLD the inverse of a weighted mean
    of inverses, TVN the exponential of a weighted mean of logarithms; the
    weight of ``R_i`` is ``1/sqrt(1 + ||grad F(R_i)||^2)`` (times the
    optional sample weight).
    """
    kind = _kind(kind)
    samples, weights = _prepare(samples, weights)
    cache = _SampleCache(kind, samples)
    return _grad_inverse(kind, _weighted_gradient_average(cache, weights / cache.denom))


def _residual(kind, r, target):
    g = _grad(kind, r)
    return float(np.linalg.norm(g - target) / np.sqrt(1.0 + np.linalg.norm(g) ** 2))


def mean_residual(kind, r, samples, weights=None):
    """Scaled residual of the TBD-mean optimality equation at ``r``.

    ``||grad F(R) - avg|| / sqrt(1 + ||grad F(R)||^2)`` where ``avg`` is the
    weighted average of the sample gradients.
    """
    kind = _kind(kind)
    samples, weights = _prepare(samples, weights)
    cache = _SampleCache(kind, samples)
    return _residual(kind, np.asarray(r), _weighted_gradient_average(cache, weights / cache.denom))


def _median_map(cache, weights, r, floor):
    d = cache.divergences(r)
    keep = d >= floor
    if not np.any(keep):
        return None
    coef = np.where(keep, weights / (np.sqrt(np.where(keep, d, 1.0)) * cache.denom), 0.0)
    return _weighted_gradient_average(cache, coef)


def _hessian_weights(kind, lam):
    """``<D, Hess F(Y) D> = sum_ij h_ij |D~_ij|^2`` with ``D~`` in the eigenbasis of ``Y``."""
    if kind is DivergenceKind.TSL:
        return np.ones((lam.size, lam.size))
    if kind is DivergenceKind.TLD:
        return 1.0 / np.outer(lam, lam)
    # divided differences of log
    diff = np.subtract.outer(lam, lam)
    close = np.abs(diff) <= 1e-10 * lam.max()
    mid = np.add.outer(lam, lam) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.subtract.outer(np.log(lam), np.log(lam)) / diff
    return np.where(close, 1.0 / mid, dd)


def _vertex_optimal(cache, weights, k, floor):
    """Whether sample ``k`` minimizes the median objective (Kuhn's vertex test).

    Near ``R_k`` the coincident terms behave like
    ``w_k sqrt(<D, Hess F(R_k) D> / (2 den_k))``, so ``R_k`` is a
    stationary point iff the gradient ``g`` of the remaining terms satisfies
    ``||g||_{Hess^-1} <= w_k / sqrt(2 den_k)``.
    """
    rk = cache.samples[k]
    d = cache.divergences(rk)
    on = d < floor
    g = np.einsum(
        "i,ijk->jk",
        np.where(on, 0.0, weights / (2 * np.sqrt(np.where(on, 1.0, d)) * cache.denom)),
        cache.grads[k] - cache.grads,
    )
    lam, vec = np.linalg.eigh(rk)
    gt = vec.conj().T @ g @ vec
    dual = np.sqrt(np.sum(np.abs(gt) ** 2 / _hessian_weights(cache.kind, lam)))
    return dual <= np.sum(weights[on]) / np.sqrt(2 * cache.denom[k])


def median_residual(kind, r, samples, weights=None, floor=1e-12):
    """Scaled residual of the TBD-median stationarity equation at ``r``.

    Same scaling as :func:`mean_residual`, with weights additionally divided
    by ``delta_F(R, R_i)^(1/2)``.  When ``r`` coincides with a sample that
    passes the vertex optimality test (or with every sample) the residual
    is 0.
    """
    kind = _kind(kind)
    samples, weights = _prepare(samples, weights)
    cache = _SampleCache(kind, samples)
    r = np.asarray(r)
    d = cache.divergences(r)
    k = int(np.argmin(d))
    if d[k] < floor and _vertex_optimal(cache, weights, k, floor):
        return 0.0
    target = _median_map(cache, weights, r, floor)
    if target is None:
        return 0.0
    return _residual(kind, r, target)


def tbd_objective(kind, r, samples, median=False, weights=None):
    """Weighted average of ``delta_F(R, R_i)`` (or its square root for medians)."""
    kind = _kind(kind)
    samples, weights = _prepare(samples, weights)
    d = _SampleCache(kind, samples).divergences(np.asarray(r, dtype=complex))
    return float(np.sum(weights * (np.sqrt(d) if median else d)))


def tbd_median(kind, samples, config=None, weights=None, init=None, return_info=False):
    """TBD median by fixed-point iteration.

    Starting from the (weighted) arithmetic mean, iterate
    ``grad F(R_{t+1}) = sum_i c_i grad F(R_i) / sum_i c_i`` with
    ``c_i = w_i / (delta_F(R_t, R_i)^(1/2) sqrt(1 + ||grad F(R_i)||^2))``
    until ``||R_{t+1} - R_t|| / ||R_t|| < config.tolerance``.  Samples with
    ``delta_F(R_t, R_i)`` below ``config.degeneracy_floor`` are left out of
    that iteration.  Each iteration also tests whether the sample nearest
    to the iterate is itself the median (a vertex optimum, which plain
    Weiszfeld iterations approach only sublinearly) and returns it if so.

    Parameters
    ----------
    kind : DivergenceKind or {'TSL', 'TLD', 'TVN'}
    samples : array_like, shape (m, N, N)
    config : FixedPointConfig, optional
    weights : array_like, shape (m,), optional
        Nonnegative sample weights (normalized internally).
    init : array_like, optional
        Starting point instead of the arithmetic mean.
    return_info : bool
        Also return a :class:`~tbdcfar.airm.SolverInfo` whose ``residual``
        is the stationarity residual at the returned point.

    Raises
    ------
    ConvergenceError
        When ``max_iterations`` is exhausted; carries the last iterate.
    """
    kind = _kind(kind)
    config = config or FixedPointConfig()
    samples, weights = _prepare(samples, weights)
    cache = _SampleCache(kind, samples)
    if init is None:
        r = _symmetrize(np.einsum("i,ijk->jk", weights, samples))
    else:
        r = as_hpd(init)
    info = SolverInfo(iterations=0, residual=np.inf, converged=False)
    for it in range(1, config.max_iterations + 1):
        target = _median_map(cache, weights, r, config.degeneracy_floor)
        if target is None:
            info.converged = True
            break
        d = cache.divergences(r)
        k = int(np.argmin(d))
        if _vertex_optimal(cache, weights, k, config.degeneracy_floor):
            # Weiszfeld creeps towards a sample that is the median; jump there
            r = cache.samples[k].copy()
            info.iterations = it
            info.converged = True
            break
        r_next = _grad_inverse(kind, target)
        if d[k] < config.degeneracy_floor:
            # the iterate sits on a sample; leave it only if that lowers the objective
            if np.sum(weights * np.sqrt(cache.divergences(r_next))) >= np.sum(weights * np.sqrt(d)):
                info.converged = True
                break
        change = np.linalg.norm(r_next - r) / np.linalg.norm(r)
        r = r_next
        info.iterations = it
        if change < config.tolerance:
            info.converged = True
            break
    info.residual = median_residual(kind, r, samples, weights, config.degeneracy_floor)
    if not info.converged:
        raise ConvergenceError(
            f"{kind.value} median did not converge in {config.max_iterations} iterations"
            f" (stationarity residual {info.residual:.3e})",
            iterate=r,
            residual=info.residual,
        )
    return (r, info) if return_info else r
