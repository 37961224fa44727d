"""Random Hermitian/HPD generators shared by the test modules."""
import numpy as np
from hypothesis import strategies as st


def random_hermitian(gen, n, size=None):
    shape = (n, n) if size is None else (size, n, n)
    a = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    return 0.5 * (a + np.swapaxes(a.conj(), -1, -2))


def random_hpd(gen, n, size=None, floor=0.1):
    shape = (n, n) if size is None else (size, n, n)
    a = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    p = a @ np.swapaxes(a.conj(), -1, -2) / n + floor * np.eye(n)
    return 0.5 * (p + np.swapaxes(p.conj(), -1, -2))


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=6)


def _herm(a):
    return 0.5 * (a + np.swapaxes(a.conj(), -1, -2))


def _fun_eig(y, f):
    w, v = np.linalg.eigh(_herm(y))
    return (v * f(w)) @ v.conj().T


def generator_value(kind, y):
    """Convex generator written from its textbook definition."""
    if kind == "TSL":
        return 0.5 * np.sum(np.abs(y) ** 2)
    if kind == "TLD":
        sign, logdet = np.linalg.slogdet(y)
        return -logdet if sign.real > 0 else np.inf
    w = np.linalg.eigvalsh(_herm(y))
    return np.sum(w * np.log(w) - w) if np.all(w > 0) else np.inf


def generator_gradient(kind, y):
    if kind == "TSL":
        return np.array(y, dtype=complex)
    if kind == "TLD":
        return -np.linalg.inv(y)
    return _fun_eig(y, np.log)


def generic_tbd(kind, y, z):
    """(F(Y) - F(Z) - <grad F(Z), Y - Z>) / sqrt(1 + ||grad F(Z)||^2)."""
    g = generator_gradient(kind, z)
    lin = np.real(np.vdot(g, y - z))
    return (generator_value(kind, y) - generator_value(kind, z) - lin) / np.sqrt(
        1.0 + np.linalg.norm(g) ** 2
    )


def minimize_tbd_objective(kind, samples, start):
    """Minimize the average divergence by BFGS over a complex Cholesky factor."""
    from scipy.optimize import minimize

    n = samples.shape[-1]
    lo = np.tril_indices(n)
    strict = np.tril_indices(n, -1)
    dens = [np.sqrt(1.0 + np.linalg.norm(generator_gradient(kind, r)) ** 2) for r in samples]
    grads = [generator_gradient(kind, r) for r in samples]
    consts = [generator_value(kind, r) - np.real(np.vdot(g, r)) for r, g in zip(samples, grads)]

    def unpack(x):
        lmat = np.zeros((n, n), dtype=complex)
        lmat[lo] = x[: len(lo[0])]
        lmat[strict] += 1j * x[len(lo[0]):]
        return lmat

    def fun(x):
        lmat = unpack(x)
        r = lmat @ lmat.conj().T
        fr = generator_value(kind, r)
        if not np.isfinite(fr):
            return np.inf, np.zeros_like(x)
        val = sum((fr - c - np.real(np.vdot(g, r))) / d for g, c, d in zip(grads, consts, dens))
        gr = generator_gradient(kind, r)
        big_g = sum((gr - g) / d for g, d in zip(grads, dens))
        dl = 2.0 * big_g @ lmat
        return val / len(samples), np.concatenate([dl[lo].real, dl[strict].imag]) / len(samples)

    l0 = np.linalg.cholesky(start)
    x0 = np.concatenate([l0[lo].real, l0[strict].imag])
    res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 5000})
    lmat = unpack(res.x)
    return lmat @ lmat.conj().T


def scalar_discrepancy(kind, r, z):
    """d(R, Z) minimized by the estimator ``kind``, from first principles."""
    import scipy.linalg

    disc, center = kind.split("-")
    if disc == "RD":
        d = np.sqrt(np.sum(np.log(scipy.linalg.eigvalsh(r, z)) ** 2))
        return d if center == "median" else d**2
    d = generic_tbd(disc, r, z)
    return np.sqrt(max(d, 0.0)) if center == "median" else d


def equation_residual(kind, r_bar, samples, outliers, big_h, step=1e-4):
    """Relative residual of (1/m) D[sum grad d](R_bar)[H] + (1/n) sum grad d(R_bar, P_j).

    Every derivative is a difference quotient of the scalar discrepancy
    (mixed second differences for the first term), projected on the
    orthonormal Hermitian basis.
    """
    from tbdcfar.linalg import hermitian_basis

    def total(r, mats):
        return sum(scalar_discrepancy(kind, r, z) for z in mats)

    m, n = len(samples), len(outliers)
    norm_h = np.linalg.norm(big_h)
    u = big_h / norm_h if norm_h > 0 else big_h
    h = step
    resid, force = [], []
    for e in hermitian_basis(r_bar.shape[-1]).elements:
        mixed = (
            total(r_bar + h * u + h * e, samples)
            - total(r_bar + h * u - h * e, samples)
            - total(r_bar - h * u + h * e, samples)
            + total(r_bar - h * u - h * e, samples)
        ) / (4 * h * h)
        phi = (total(r_bar + h * e, outliers) - total(r_bar - h * e, outliers)) / (2 * h)
        resid.append(norm_h * mixed / m + phi / n)
        force.append(phi / n)
    return np.linalg.norm(resid) / max(1.0, np.linalg.norm(force))
