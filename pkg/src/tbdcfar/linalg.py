"""Hermitian and HPD matrix primitives.

Matrices are plain ``numpy`` complex arrays.  ``as_hermitian`` and
``as_hpd`` validate user input once; the spectral helpers accept stacks of
shape ``(..., N, N)`` and assume their input is already valid, which keeps
the inner loops of the solvers free of repeated checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, NotHermitianError, NotHPDError

__all__ = [
    "HERMITIAN_RTOL",
    "as_hermitian",
    "as_hpd",
    "is_hpd",
    "frobenius_inner",
    "frobenius_norm",
    "spectral_map",
    "logm",
    "expm",
    "sqrtm",
    "invsqrtm",
    "invm",
    "HermitianBasis",
    "hermitian_basis",
    "decompose",
    "reconstruct",
]

HERMITIAN_RTOL = 1e-12
HPD_RTOL = 1e-12


def _ct(a):
    return np.swapaxes(a.conj(), -1, -2)


def _symmetrize(a):
    return 0.5 * (a + _ct(a))


def as_hermitian(m, rtol=HERMITIAN_RTOL):
    """Return ``m`` as an exactly Hermitian complex array.

    Input whose Hermitian defect ``||M - M^H|| / ||M||`` exceeds ``rtol``
    is rejected; otherwise the stored form is ``(M + M^H) / 2``.
    """
    a = np.asarray(m, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] == 0:
        raise DimensionError(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotHermitianError("matrix has non-finite entries")
    scale = np.linalg.norm(a, axis=(-2, -1))
    defect = np.linalg.norm(a - _ct(a), axis=(-2, -1))
    if np.any(defect > rtol * np.maximum(scale, np.finfo(float).tiny)):
        raise NotHermitianError(
            f"Hermitian defect {float(np.max(defect / np.maximum(scale, 1e-300))):.3e}"
            f" exceeds {rtol:g}"
        )
    return _symmetrize(a)


def is_hpd(m):
    """Scale-relative positivity test on a Hermitian array (or stack)."""
    a = np.asarray(m)
    w = np.linalg.eigvalsh(a)
    n = a.shape[-1]
    trace_scale = np.real(np.trace(a, axis1=-2, axis2=-1)) / n
    return np.all(w[..., 0] > HPD_RTOL * trace_scale) & np.all(trace_scale > 0)


def as_hpd(m):
    """Validate and return a Hermitian positive-definite array.

    The smallest eigenvalue must exceed ``1e-12 * tr(M)/N``.
    """
    a = as_hermitian(m)
    if not is_hpd(a):
        lam = np.linalg.eigvalsh(a)[..., 0]
        raise NotHPDError(f"smallest eigenvalue {float(np.min(lam)):.3e} is not positive")
    return a


def _check_same_dim(*mats):
    shapes = {np.shape(x)[-2:] for x in mats}
    if len(shapes) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(shapes)}")


def frobenius_inner(a, b):
    """Frobenius inner product ``tr(A^H B)`` (real part for Hermitian inputs)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.real(np.vdot(a, b)))


def frobenius_norm(a):
    return float(np.linalg.norm(a))


def _eig_apply(m, func):
    w, v = np.linalg.eigh(m)
    return _symmetrize((v * func(w)[..., None, :]) @ _ct(v))


_SPECTRAL = {
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "inv": np.reciprocal,
    "invsqrt": lambda w: 1.0 / np.sqrt(w),
}


def spectral_map(f, m, check=True):
    """Apply a scalar function to the spectrum of a Hermitian matrix.

    Parameters
    ----------
    f : {'log', 'exp', 'sqrt', 'inv', 'invsqrt'}
        Function applied to the eigenvalues.
    m : array_like, shape (..., N, N)
        Hermitian input; HPD for every ``f`` except ``'exp'``.
    check : bool
        Validate the input first. Internal callers pass ``False``.

    Returns
    -------
    ndarray
        ``U f(Lambda) U^H``, Hermitian by construction.
    """
    if f not in _SPECTRAL:
        raise ValueError(f"unknown spectral function {f!r}")
    if check:
        m = as_hermitian(m) if f == "exp" else as_hpd(m)
    try:
        return _eig_apply(m, _SPECTRAL[f])
    except np.linalg.LinAlgError as exc:
        raise NotHPDError(f"eigendecomposition failed: {exc}") from exc


def logm(m):
    return _eig_apply(m, np.log)


def expm(m):
    return _eig_apply(m, np.exp)


def sqrtm(m):
    return _eig_apply(m, np.sqrt)


def invsqrtm(m):
    return _eig_apply(m, lambda w: 1.0 / np.sqrt(w))


def invm(m):
    return _eig_apply(m, np.reciprocal)


def sqrt_and_invsqrt(m):
    w, v = np.linalg.eigh(m)
    s = np.sqrt(w)
    vh = _ct(v)
    return _symmetrize((v * s[..., None, :]) @ vh), _symmetrize((v / s[..., None, :]) @ vh)


@dataclass(frozen=True)
class HermitianBasis:
    """Orthonormal basis of the real vector space of N x N Hermitian matrices.

    ``elements`` has shape ``(N*N, N, N)``.  Coordinates are real and are
    obtained by Frobenius projection, so ``decompose``/``reconstruct`` are
    mutually inverse isometries.
    """

    dim: int
    elements: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.elements, dtype=complex)
        if e.shape != (self.dim**2, self.dim, self.dim):
            raise DimensionError(f"basis for N={self.dim} needs {self.dim**2} elements")
        e.setflags(write=False)
        object.__setattr__(self, "elements", e)

    def __len__(self):
        return self.dim**2

    def decompose(self, h):
        h = np.asarray(h)
        if h.shape[-2:] != (self.dim, self.dim):
            raise DimensionError(f"expected {self.dim}x{self.dim} matrix, got {h.shape}")
        return np.real(np.einsum("kij,...ij->...k", self.elements.conj(), h))

    def reconstruct(self, coords):
        c = np.asarray(coords, dtype=float)
        if c.shape[-1] != self.dim**2:
            raise DimensionError(f"expected {self.dim**2} coordinates, got {c.shape[-1]}")
        return np.einsum("...k,kij->...ij", c, self.elements)

    def gram(self):
        e = self.elements.reshape(len(self), -1)
        return np.real(e.conj() @ e.T)

    def permuted(self, order):
        """Same basis with elements reordered by ``order``."""
        return HermitianBasis(self.dim, self.elements[np.asarray(order)])


def hermitian_basis(n):
    """Build the standard orthonormal Hermitian basis for dimension ``n``.

    Order: the ``n`` diagonal units ``E_ii``, then ``(E_ij + E_ji)/sqrt(2)``
    for ``i < j``, then ``i (E_ij - E_ji)/sqrt(2)`` for ``i < j``; pairs are
    in lexicographic order.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"basis dimension must be a positive integer, got {n}")
    n = int(n)
    elems = np.zeros((n * n, n, n), dtype=complex)
    k = 0
    for i in range(n):
        elems[k, i, i] = 1.0
        k += 1
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    r = 1.0 / np.sqrt(2.0)
    for i, j in pairs:
        elems[k, i, j] = elems[k, j, i] = r
        k += 1
    for i, j in pairs:
        elems[k, i, j] = 1j * r
        elems[k, j, i] = -1j * r
        k += 1
    return HermitianBasis(n, elems)


def decompose(h, basis):
    """Real coordinates ``h^k = <H, E_k>`` of a Hermitian matrix."""
    return basis.decompose(h)


def reconstruct(coords, basis):
    """Hermitian matrix ``sum_k h^k E_k``."""
    return basis.reconstruct(coords)
