"""Steering vectors, clutter covariance, clutter samplers and test scenes."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import _symmetrize, as_hpd, sqrtm

__all__ = [
    "ClutterParams",
    "RngStream",
    "Scene",
    "db_to_linear",
    "steering_vector",
    "build_sigma",
    "sample_gaussian_clutter",
    "sample_compound_gaussian",
    "amplitude_for_scr",
]


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ClutterParams:
    """Clutter covariance and texture settings.

    Defaults are the simulation values used for the reference scenarios:
    20 dB clutter-to-noise ratio, one-lag coefficient 0.9, clutter Doppler
    0.2 and a Gamma(4, 3) texture.
    """

    sigma_c_sq_db: float = 20.0
    rho: float = 0.9
    f_c: float = 0.2
    alpha: float = 4.0
    beta: float = 3.0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("gamma shape and scale must be positive")


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(master_seed, stream_id)``.

    ``generator(*path)`` derives an independent ``numpy`` generator for any
    sub-path, e.g. one per Monte-Carlo trial, so results never depend on the
    order in which trials are executed.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.stream_id < 0:
            raise ValueError("stream_id must be nonnegative")

    def generator(self, *path):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *path))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, stream_id):
        return RngStream(self.master_seed, stream_id)


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def steering_vector(n, f_d):
    """Unit-norm Doppler steering vector ``exp(-i 2 pi f_d k) / sqrt(N)``."""
    if n < 1:
        raise ValueError("N must be positive")
    k = np.arange(n)
    return np.exp(-2j * np.pi * f_d * k) / np.sqrt(n)


def build_sigma(n, params=None):
    """Clutter-plus-noise covariance ``Sigma_0 + I``.

    ``Sigma_0[i, j] = sigma_c^2 rho^|i-j| exp(i 2 pi f_c (i - j))`` with
    ``sigma_c^2`` converted from dB.
    """
    params = params or ClutterParams()
    if n < 1:
        raise ValueError("N must be positive")
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    sig0 = db_to_linear(params.sigma_c_sq_db) * params.rho ** np.abs(lag) * np.exp(
        2j * np.pi * params.f_c * lag
    )
    return as_hpd(sig0 + np.eye(n))


def _circular_normal(gen, shape):
    # unit total variance: real and imaginary parts each N(0, 1/2)
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)


def sample_gaussian_clutter(sigma, rng, size=None, sigma_sqrt=None):
    """Draw ``CN(0, Sigma)`` vectors as ``Sigma^1/2 w``.

    Parameters
    ----------
    sigma : array_like, shape (N, N)
        HPD covariance.
    rng : RngStream, numpy Generator or seed
        An ``RngStream`` always reproduces the same draws.
    size : int, optional
        Number of vectors; a single ``(N,)`` vector when omitted.
    sigma_sqrt : ndarray, optional
        Precomputed HPD square root of ``sigma``.
    """
    gen = _as_generator(rng)
    root = sqrtm(as_hpd(sigma)) if sigma_sqrt is None else sigma_sqrt
    n = root.shape[-1]
    w = _circular_normal(gen, (1 if size is None else size, n))
    c = w @ root.T
    return c[0] if size is None else c


def sample_compound_gaussian(sigma, alpha, beta, rng, size=None, sigma_sqrt=None):
    """Draw K-distributed clutter ``sqrt(tau) z`` with ``tau ~ Gamma(alpha, scale=beta)``."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("gamma shape and scale must be positive")
    gen = _as_generator(rng)
    z = sample_gaussian_clutter(sigma, gen, size=size, sigma_sqrt=sigma_sqrt)
    tau = gen.gamma(alpha, beta, size=None if size is None else (size, 1))
    return np.sqrt(tau) * z


def amplitude_for_scr(scr_db, s, r):
    """Target amplitude ``|xi|`` giving ``|xi|^2 s^H R^-1 s`` equal to the SCR."""
    s = np.asarray(s)
    r = as_hpd(r)
    if r.shape[-1] != s.shape[-1]:
        raise ValueError("steering vector and covariance dimensions differ")
    quad = float(np.real(np.vdot(s, np.linalg.solve(r, s))))
    return float(np.sqrt(db_to_linear(scr_db) / quad))


@dataclass(frozen=True)
class Scene:
    """Clutter environment of one Monte-Carlo experiment.

    Each trial has ``m`` training cells and one cell under test (CUT).
    ``n_interferences`` training cells (the first ones) each carry an
    interfering target at Doppler ``f_i`` whose power relative to the clutter
    is ``icr_db``, measured like the SCR.  Interference is absent from the
    CUT.
    """

    n: int = 8
    m: int = 8
    params: ClutterParams = field(default_factory=ClutterParams)
    clutter: str = "gaussian"
    f_d: float = 0.2
    f_i: float = 0.2
    n_interferences: int = 2
    icr_db: float = 20.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("N must be at least 2")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.clutter not in ("gaussian", "compound"):
            raise ValueError(f"clutter must be 'gaussian' or 'compound', got {self.clutter!r}")
        if not 0 <= self.n_interferences <= self.m:
            raise ValueError("n_interferences must lie in [0, m]")

    @cached_property
    def sigma(self):
        return build_sigma(self.n, self.params)

    @cached_property
    def sigma_sqrt(self):
        return sqrtm(self.sigma)

    @cached_property
    def steering(self):
        return steering_vector(self.n, self.f_d)

    @cached_property
    def clutter_covariance(self):
        """Covariance of the clutter process (texture mean included)."""
        if self.clutter == "compound":
            return _symmetrize(self.params.alpha * self.params.beta * self.sigma)
        return self.sigma

    def target_amplitude(self, scr_db):
        return amplitude_for_scr(scr_db, self.steering, self.clutter_covariance)

    def draw_clutter(self, gen, count):
        if self.clutter == "compound":
            return sample_compound_gaussian(
                self.sigma, self.params.alpha, self.params.beta, gen, size=count,
                sigma_sqrt=self.sigma_sqrt,
            )
        return sample_gaussian_clutter(self.sigma, gen, size=count, sigma_sqrt=self.sigma_sqrt)

    def draw_trial(self, gen, scr_db=None):
        """One trial: training cells ``(m, N)`` and CUT ``(N,)``.

        Clutter is drawn first, then interference phases, then the target
        phase, so H0 and H1 trials from the same generator share clutter.
        """
        x = self.draw_clutter(gen, self.m + 1)
        training, cut = x[: self.m], x[self.m]
        if self.n_interferences:
            s_int = steering_vector(self.n, self.f_i)
            amp = amplitude_for_scr(self.icr_db, s_int, self.clutter_covariance)
            phases = np.exp(2j * np.pi * gen.random(self.n_interferences))
            training = training.copy()
            training[: self.n_interferences] += (amp * phases)[:, None] * s_int
        phase = np.exp(2j * np.pi * gen.random())
        if scr_db is not None:
            cut = cut + self.target_amplitude(scr_db) * phase * self.steering
        return training, cut
