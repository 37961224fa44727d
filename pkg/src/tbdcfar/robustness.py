"""Influence functions of covariance estimators.

For an estimator defined by ``sum_i g(R, R_i) = 0`` (``g`` a per-sample
gradient field), contaminating the ``m`` clean samples with ``n`` outliers
at weight ``eps`` moves the center to ``R_bar + eps H + O(eps^2)``.  In the
orthonormal Hermitian basis ``{E_k}`` the perturbation solves

    (1/m) theta h + (1/n) phi = 0,

where ``theta[s, k] = <d/dt sum_i g(R_bar + t E_k, R_i), E_s>`` and
``phi`` holds the coordinates of ``sum_j g(R_bar, P_j)``.  The influence
value is ``||H|| / ||R_bar||``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .airm import DescentConfig, rd_mean, rd_median
from .clutter import Scene
from .detector import scm, toeplitz_covariances
from .exceptions import SingularSystemError
from .linalg import _ct, _symmetrize, hermitian_basis, invm, sqrt_and_invsqrt
from .parallel import map_trials
from .tbd import DivergenceKind, FixedPointConfig, _grad, _SampleCache, tbd_mean, tbd_median

__all__ = [
    "ESTIMATORS",
    "EstimatorHandle",
    "InfluenceResult",
    "InfluenceCurve",
    "contamination_gradient",
    "assemble_theta",
    "influence_matrix",
    "at_vertex",
    "influence",
    "empirical_influence",
    "scm_influence",
    "influence_curve",
]

ESTIMATORS = (
    "RD-mean", "RD-median",
    "TSL-mean", "TSL-median",
    "TLD-mean", "TLD-median",
    "TVN-mean", "TVN-median",
    "SCM",
)

# Tight solver settings: the first-order perturbation is only meaningful at
# an accurately converged center.
TIGHT_DESCENT = DescentConfig(initial_step=0.5, tolerance=1e-9, max_iterations=5000)
TIGHT_DESCENT_MEDIAN = DescentConfig(initial_step=1.0, tolerance=1e-9, max_iterations=5000)
TIGHT_FIXED_POINT = FixedPointConfig(tolerance=1e-13, max_iterations=200000)
MAX_CONDITION = 1e12
DEGENERACY = 1e-12
QUADRATURE_NODES = 16
MAX_QUADRATURE_NODES = 1024
QUADRATURE_TOL = 1e-11
FD_RELATIVE_STEP = 1e-6


@dataclass(frozen=True)
class EstimatorHandle:
    """One covariance estimator and the per-sample discrepancy it minimizes.

    Means minimize the average squared Riemannian distance or the average
    TBD; medians the average distance or square-rooted TBD.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.kind!r}; expected one of {ESTIMATORS}")

    @property
    def discrepancy(self):
        return self.kind.split("-")[0]

    @property
    def is_median(self):
        return self.kind.endswith("median")

    @property
    def divergence(self):
        return DivergenceKind(self.discrepancy)

    def center(self, samples, weights=None, init=None, tight=True):
        """Mean or median of HPD ``samples`` (optionally weighted)."""
        if self.kind == "SCM":
            raise ValueError("the SCM center is computed from vectors; use scm()")
        if self.discrepancy == "RD":
            if self.is_median:
                cfg = TIGHT_DESCENT_MEDIAN if tight else None
                return rd_median(samples, cfg, weights=weights, init=init)
            return rd_mean(samples, TIGHT_DESCENT if tight else None, weights=weights, init=init)
        if self.is_median:
            cfg = TIGHT_FIXED_POINT if tight else None
            return tbd_median(self.divergence, samples, cfg, weights=weights, init=init)
        return tbd_mean(self.divergence, samples, weights=weights)

    def field(self, r, others):
        """Per-sample gradient field ``g(R, Z_i)``, shape ``(len(others), N, N)``.

        RD estimators use ``R Log(Z^-1 R)`` (divided by the distance for the
        median); TBD estimators use the Euclidean gradient of the divergence
        (or of its square root).
        """
        others = np.asarray(others, dtype=complex)
        if self.kind == "SCM":
            raise ValueError("the SCM has no gradient field")
        if self.discrepancy == "RD":
            s, _ = sqrt_and_invsqrt(r)
            w, v = np.linalg.eigh(_symmetrize(s @ invm(others) @ s))
            lw = np.log(w)
            g = s @ ((v * lw[..., None, :]) @ _ct(v)) @ s
            if self.is_median:
                d = np.sqrt(np.sum(lw**2, axis=-1))
                _check_separated(d, "Riemannian distance")
                g = g / d[:, None, None]
            return _symmetrize(g)
        cache = _SampleCache(self.divergence, others)
        g = (_grad(self.divergence, r)[None] - cache.grads) / cache.denom[:, None, None]
        if self.is_median:
            d = cache.divergences(r)
            _check_separated(d, "divergence")
            g = g / (2.0 * np.sqrt(d))[:, None, None]
        return _symmetrize(g)


def _check_separated(d, what):
    if np.any(d < DEGENERACY):
        raise ValueError(
            f"{what} between the center and a sample is below {DEGENERACY:g}; the median "
            "gradient is singular there. Draw outliers away from the center."
        )


def _handle(est):
    return est if isinstance(est, EstimatorHandle) else EstimatorHandle(est)


@dataclass
class InfluenceResult:
    """First-order perturbation ``H`` and its normalized size ``||H|| / ||R_bar||``."""

    H: np.ndarray
    value: float
    residual: float
    condition: float
    coords: np.ndarray | None = None


@dataclass
class InfluenceCurve:
    estimator: str
    n_grid: list
    mean: list
    stderr: list
    trials: int


def contamination_gradient(est, r_bar, outliers, basis=None):
    """Coordinates ``phi`` of ``sum_j g(R_bar, P_j)`` in the Hermitian basis."""
    est = _handle(est)
    outliers = np.asarray(outliers, dtype=complex)
    if outliers.ndim != 3 or outliers.shape[0] == 0:
        raise ValueError("need at least one outlier matrix")
    basis = basis or hermitian_basis(r_bar.shape[-1])
    return basis.decompose(est.field(r_bar, outliers).sum(axis=0))


def _gauss_legendre_01(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def _rd_mean_directional(r_bar, samples, directions, nodes=QUADRATURE_NODES):
    """Derivative of ``sum_i R Log(R_i^-1 R)`` at ``R_bar`` along each direction.

    ``E Log(R_i^-1 R_bar) + R_bar int_0^1 A^-1 R_i^-1 E A^-1 dtau`` with
    ``A = (R_i^-1 R_bar - I) tau + I``.  The integral uses Gauss-Legendre
    starting at ``nodes`` points and doubling until two successive rules agree
    to ``QUADRATURE_TOL``.
    """
    n = r_bar.shape[-1]
    eye = np.eye(n)
    inv_samples = invm(samples)
    s, si = sqrt_and_invsqrt(r_bar)
    w, v = np.linalg.eigh(_symmetrize(s @ inv_samples @ s))
    # Log(R_i^-1 R_bar) = R_bar^-1/2 Log(R_bar^1/2 R_i^-1 R_bar^1/2) R_bar^1/2
    log_a = si @ ((v * np.log(w)[..., None, :]) @ _ct(v)) @ s
    a = inv_samples @ r_bar
    rie = np.einsum("iab,kbc->ikac", inv_samples, directions)  # R_i^-1 E_k

    def integral(q):
        tau, wt = _gauss_legendre_01(q)
        a_inv = np.linalg.inv((a[:, None] - eye) * tau[None, :, None, None] + eye)
        return np.einsum("q,iqab,ikbc,iqcd->kad", wt, a_inv, rie, a_inv, optimize=True)

    # double the rule until it agrees with the next one
    prev = integral(nodes)
    while True:
        nodes *= 2
        cur = integral(nodes)
        if np.max(np.abs(cur - prev)) <= QUADRATURE_TOL * max(1.0, np.max(np.abs(cur))):
            break
        if nodes >= MAX_QUADRATURE_NODES:
            raise FloatingPointError(
                f"RD-mean quadrature did not settle with {nodes} nodes; the samples are "
                "too ill-conditioned relative to the center"
            )
        prev = cur
    return np.einsum("kab,ibc->kac", directions, log_a) + r_bar[None] @ cur


def _tsl_median_directional(r_bar, samples, directions):
    # g_i = sqrt(v_i/2) D_i/||D_i||, D_i = R - R_i
    cache = _SampleCache(DivergenceKind.TSL, samples)
    d = r_bar[None] - samples
    dn = np.linalg.norm(d, axis=(-2, -1))
    _check_separated(dn, "distance")
    c = np.sqrt(0.5 / cache.denom)
    proj = np.real(np.einsum("iab,kab->ik", d.conj(), directions))  # <D_i, E_k>
    out = np.sum(c / dn) * directions
    out -= np.einsum("i,ik,iab->kab", c / dn**3, proj, d)
    return out


def _fd_directional(est, r_bar, samples, directions, rel_step=FD_RELATIVE_STEP):
    h = rel_step * np.linalg.norm(r_bar)
    out = np.empty_like(directions)
    for k, e in enumerate(directions):
        plus = est.field(r_bar + h * e, samples).sum(axis=0)
        minus = est.field(r_bar - h * e, samples).sum(axis=0)
        out[k] = (plus - minus) / (2.0 * h)
    return out


def assemble_theta(est, r_bar, samples, basis=None, method="auto", nodes=QUADRATURE_NODES):
    """Coefficient matrix ``theta[s, k]`` of the influence linear system.

    Parameters
    ----------
    est : EstimatorHandle or str
    r_bar : ndarray, shape (N, N)
        Converged center of ``samples`` under ``est``.
    samples : array_like, shape (m, N, N)
    basis : HermitianBasis, optional
    method : {'auto', 'analytic', 'fd'}
        ``'auto'`` is analytic for the RD mean (quadrature of the matrix
        logarithm derivative) and the TSL mean/median, and central finite
        differences with step ``1e-6 ||R_bar||`` otherwise.
    nodes : int
        Gauss-Legendre nodes for the RD-mean integral.
    """
    est = _handle(est)
    samples = np.asarray(samples, dtype=complex)
    basis = basis or hermitian_basis(r_bar.shape[-1])
    dirs = basis.elements
    analytic = est.kind in ("RD-mean", "TSL-mean", "TSL-median")
    if method == "analytic" and not analytic:
        raise ValueError(f"no analytic derivative for {est.kind}")
    if method not in ("auto", "analytic", "fd"):
        raise ValueError(f"unknown method {method!r}")
    if method == "fd" or not analytic:
        deriv = _fd_directional(est, r_bar, samples, dirs)
    elif est.kind == "RD-mean":
        deriv = _rd_mean_directional(r_bar, samples, dirs, nodes)
    elif est.kind == "TSL-mean":
        weight = np.sum(1.0 / _SampleCache(DivergenceKind.TSL, samples).denom)
        deriv = weight * dirs
    else:
        deriv = _tsl_median_directional(r_bar, samples, dirs)
    theta = basis.decompose(deriv).T  # rows s, columns k
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite entries in theta")
    return theta


def influence_matrix(theta, phi, m, n, basis, r_bar):
    """Solve ``(1/m) theta h + (1/n) phi = 0`` and rebuild ``H``.

    Raises
    ------
    SingularSystemError
        If the condition number of ``theta`` exceeds ``1e12``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    cond = float(np.linalg.cond(theta))
    if not cond < MAX_CONDITION:
        raise SingularSystemError(f"theta is numerically singular (condition {cond:.3e})")
    h = np.linalg.solve(theta / m, -phi / n)
    residual = float(np.linalg.norm(theta @ h / m + phi / n))
    big_h = basis.reconstruct(h)
    value = float(np.linalg.norm(big_h) / np.linalg.norm(r_bar))
    return InfluenceResult(H=big_h, value=value, residual=residual, condition=cond, coords=h)


def at_vertex(est, r_bar, samples):
    """Whether a median center coincides with one of its samples.

    Solvers return such a point only when it passes the vertex optimality
    test.  The center then stays put under infinitesimal contamination, so
    the influence is 0 and the linear system (singular there) is skipped.
    """
    est = _handle(est)
    if not est.is_median:
        return False
    samples = np.asarray(samples, dtype=complex)
    if est.discrepancy == "RD":
        s, _ = sqrt_and_invsqrt(r_bar)
        w = np.linalg.eigvalsh(_symmetrize(s @ invm(samples) @ s))
        d = np.sqrt(np.sum(np.log(w) ** 2, axis=-1))
    else:
        d = _SampleCache(est.divergence, samples).divergences(r_bar)
    return bool(np.min(d) < DEGENERACY)


def _zero_influence(r_bar, basis):
    return InfluenceResult(H=np.zeros_like(r_bar), value=0.0, residual=0.0,
                           condition=float("nan"), coords=np.zeros(len(basis)))


def influence(est, samples, outliers, r_bar=None, basis=None, method="auto"):
    """Analytic influence of ``outliers`` on the estimator over ``samples``.

    Returns ``H = 0`` when a median center sits on a sample (see
    :func:`at_vertex`).
    """
    est = _handle(est)
    samples = np.asarray(samples, dtype=complex)
    outliers = np.asarray(outliers, dtype=complex)
    r_bar = est.center(samples) if r_bar is None else r_bar
    basis = basis or hermitian_basis(r_bar.shape[-1])
    if at_vertex(est, r_bar, samples):
        return _zero_influence(r_bar, basis)
    theta = assemble_theta(est, r_bar, samples, basis, method)
    phi = contamination_gradient(est, r_bar, outliers, basis)
    return influence_matrix(theta, phi, len(samples), len(outliers), basis, r_bar)


def empirical_influence(est, samples, outliers, epsilon, r_bar=None):
    """Finite-contamination estimate ``(R_eps - R_bar) / eps``.

    ``R_eps`` minimizes ``(1 - eps)/m sum_i d(R, R_i) + eps/n sum_j d(R, P_j)``,
    computed by the weighted variant of the estimator's own solver.
    """
    est = _handle(est)
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    samples = np.asarray(samples, dtype=complex)
    outliers = np.asarray(outliers, dtype=complex)
    m, n = len(samples), len(outliers)
    if r_bar is None:
        r_bar = est.center(samples)
    weights = np.concatenate([np.full(m, (1 - epsilon) / m), np.full(n, epsilon / n)])
    r_eps = est.center(np.concatenate([samples, outliers]), weights=weights, init=r_bar)
    return _symmetrize((r_eps - r_bar) / epsilon)


def scm_influence(samples, outliers):
    """Influence value of the sample covariance from a direct difference.

    ``R_bar`` is the SCM of the clean vectors and ``R_hat`` that of clean and
    outlier vectors together; ``value = ||R_hat - R_bar|| / ||R_bar||``.
    """
    samples = np.asarray(samples, dtype=complex)
    outliers = np.asarray(outliers, dtype=complex).reshape(-1, samples.shape[-1])
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need at least one clean vector")
    r_bar = scm(samples)
    r_hat = scm(np.concatenate([samples, outliers])) if len(outliers) else r_bar
    diff = r_hat - r_bar
    return InfluenceResult(
        H=diff,
        value=float(np.linalg.norm(diff) / np.linalg.norm(r_bar)),
        residual=0.0,
        condition=float("nan"),
    )


# Stream path prefix for robustness trials (detection uses 0-2).
PHASE_ROBUSTNESS = 3


def draw_contaminated(scene, m, n_out, gen, scr_outlier_db=40.0):
    """Clean clutter vectors and outlier vectors ``xi s + c`` at the given SCR."""
    clean = scene.draw_clutter(gen, m)
    c_out = scene.draw_clutter(gen, n_out)
    amp = scene.target_amplitude(scr_outlier_db)
    phases = np.exp(2j * np.pi * gen.random(n_out))
    out = c_out + (amp * phases)[:, None] * scene.steering[None, :]
    return clean, out


def _robustness_trial(i, estimators, scene, m, n_grid, rng, scr_outlier_db):
    gen = rng.generator(PHASE_ROBUSTNESS, i)
    n_max = max(n_grid)
    clean, out = draw_contaminated(scene, m, max(n_max, 1), gen, scr_outlier_db)
    samples = toeplitz_covariances(clean)
    outliers = toeplitz_covariances(out)
    basis = hermitian_basis(scene.n)
    values = np.zeros((len(estimators), len(n_grid)))
    for a, name in enumerate(estimators):
        if name == "SCM":
            for b, n in enumerate(n_grid):
                values[a, b] = scm_influence(clean, out[:n]).value if n else 0.0
            continue
        est = EstimatorHandle(name)
        r_bar = est.center(samples)
        if at_vertex(est, r_bar, samples):
            continue
        theta = assemble_theta(est, r_bar, samples, basis)
        for b, n in enumerate(n_grid):
            if n == 0:
                continue
            phi = contamination_gradient(est, r_bar, outliers[:n], basis)
            values[a, b] = influence_matrix(theta, phi, m, n, basis, r_bar).value
    return values


def influence_curve(estimators, scene, m, n_grid, trials, rng, scr_outlier_db=40.0, workers=1):
    """Average influence value per estimator over ``trials`` random draws.

    Each trial draws ``m`` clean clutter vectors and ``max(n_grid)`` outlier
    vectors; the curve point for ``n`` uses the first ``n`` outliers.  The
    clean and outlier covariance matrices are single-snapshot Toeplitz
    estimates.  ``n = 0`` yields 0.
    """
    estimators = [e.kind if isinstance(e, EstimatorHandle) else e for e in estimators]
    for e in estimators:
        EstimatorHandle(e)
    n_grid = [int(n) for n in n_grid]
    if m < 1 or trials < 1 or any(n < 0 for n in n_grid) or not n_grid:
        raise ValueError("need m >= 1, trials >= 1 and a non-empty grid of n >= 0")
    fn = partial(_robustness_trial, estimators=tuple(estimators), scene=scene, m=m,
                 n_grid=tuple(n_grid), rng=rng, scr_outlier_db=scr_outlier_db)
    vals = np.array(map_trials(fn, trials, workers))  # (trials, est, n)
    mean = vals.mean(axis=0)
    stderr = vals.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros_like(mean)
    return {
        name: InfluenceCurve(name, n_grid, mean[a].tolist(), stderr[a].tolist(), trials)
        for a, name in enumerate(estimators)
    }
