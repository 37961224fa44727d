import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    generic_tbd,
    generator_value,
    minimize_tbd_objective,
    random_hermitian,
    random_hpd,
    rel,
    seeds,
)
from tbdcfar.exceptions import ConvergenceError
from tbdcfar.linalg import hermitian_basis, is_hpd
from tbdcfar.tbd import (
    DivergenceKind,
    FixedPointConfig,
    _hessian_weights,
    mean_residual,
    median_residual,
    tbd_gradient,
    tbd_mean,
    tbd_median,
    tbd_objective,
    tbd_value,
)

KINDS = ["TSL", "TLD", "TVN"]
kinds = st.sampled_from(KINDS)


@pytest.mark.parametrize("kind", KINDS)
def test_divergence_vanishes_on_diagonal(kind):
    p = random_hpd(np.random.default_rng(0), 4)
    assert abs(tbd_value(kind, p, p)) < 1e-12


def test_tsl_scalar_example():
    assert tbd_value("TSL", 2 * np.eye(2), np.eye(2)) == pytest.approx(1 / np.sqrt(3), rel=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_specialized_forms_match_generic_definition(kind):
    gen = np.random.default_rng(1)
    for n in (1, 2, 4, 8):
        y, z = random_hpd(gen, n, size=2)
        assert tbd_value(kind, y, z) == pytest.approx(generic_tbd(kind, y, z), abs=1e-10)


def test_divergence_is_asymmetric():
    y, z = random_hpd(np.random.default_rng(2), 3, size=2)
    assert abs(tbd_value("TLD", y, z) - tbd_value("TLD", z, y)) > 1e-6


def test_kind_accepts_strings_and_enum():
    y, z = random_hpd(np.random.default_rng(3), 2, size=2)
    assert tbd_value("tvn", y, z) == tbd_value(DivergenceKind.TVN, y, z)
    with pytest.raises(ValueError):
        tbd_value("KL", y, z)


@settings(max_examples=300, deadline=None)
@given(kinds, seeds, st.integers(1, 8))
def test_nonnegative(kind, seed, n):
    y, z = random_hpd(np.random.default_rng(seed), n, size=2)
    assert tbd_value(kind, y, z) >= -1e-12


@settings(max_examples=100, deadline=None)
@given(kinds, seeds, st.floats(1e-7, 1.0))
def test_small_divergence_means_close_matrices(kind, seed, scale):
    gen = np.random.default_rng(seed)
    p = random_hpd(gen, 3)
    q = p + scale * (random_hpd(gen, 3) - random_hpd(gen, 3))
    if not is_hpd(q):
        return
    if tbd_value(kind, q, p) < 1e-10:
        assert rel(q, p) < 1e-4


def test_gradients_closed_forms():
    r = random_hpd(np.random.default_rng(4), 3)
    np.testing.assert_allclose(tbd_gradient("TSL", r), r)
    np.testing.assert_allclose(tbd_gradient("TLD", np.diag([2.0, 4.0])), -np.diag([0.5, 0.25]))


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_differences(kind):
    r = random_hpd(np.random.default_rng(5), 4)
    g = tbd_gradient(kind, r)
    eps = 1e-6
    for e in hermitian_basis(4).elements:
        fd = (generator_value(kind, r + eps * e) - generator_value(kind, r - eps * e)) / (2 * eps)
        assert fd == pytest.approx(np.real(np.vdot(g, e)), abs=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_mean_of_identical_samples(kind):
    p = random_hpd(np.random.default_rng(6), 4)
    np.testing.assert_allclose(tbd_mean(kind, np.stack([p] * 3)), p, atol=1e-10)
    np.testing.assert_allclose(tbd_mean(kind, p[None]), p, atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_mean_solves_optimality_equation(kind):
    gen = np.random.default_rng(7)
    for _ in range(10):
        samples = random_hpd(gen, 4, size=5)
        r = tbd_mean(kind, samples)
        assert is_hpd(r)
        assert mean_residual(kind, r, samples) < 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_mean_matches_independent_minimizer(kind):
    gen = np.random.default_rng(8)
    samples = random_hpd(gen, 4, size=5)
    r = tbd_mean(kind, samples)
    r_num = minimize_tbd_objective(kind, samples, samples.mean(axis=0))
    assert rel(r_num, r) < 1e-4


def test_mean_closed_forms_by_kind():
    gen = np.random.default_rng(9)
    samples = random_hpd(gen, 3, size=4)
    w = 1 / np.sqrt(1 + np.linalg.norm(samples, axis=(1, 2)) ** 2)
    np.testing.assert_allclose(tbd_mean("TSL", samples), np.einsum("i,ijk->jk", w / w.sum(), samples),
                               atol=1e-12)
    inv = np.linalg.inv(samples)
    w = 1 / np.sqrt(1 + np.linalg.norm(inv, axis=(1, 2)) ** 2)
    expected = np.linalg.inv(np.einsum("i,ijk->jk", w / w.sum(), inv))
    np.testing.assert_allclose(tbd_mean("TLD", samples), expected, atol=1e-10)


def test_weighted_mean_matches_repetition():
    gen = np.random.default_rng(10)
    a, b = random_hpd(gen, 3, size=2)
    for kind in KINDS:
        np.testing.assert_allclose(tbd_mean(kind, np.stack([a, b]), weights=[3, 1]),
                                   tbd_mean(kind, np.stack([a, a, a, b])), atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_median_of_identical_samples(kind):
    p = random_hpd(np.random.default_rng(11), 3)
    r, info = tbd_median(kind, np.stack([p] * 4), return_info=True)
    np.testing.assert_allclose(r, p, atol=1e-10)
    assert info.converged


@pytest.mark.parametrize("kind", KINDS)
def test_median_resists_a_single_outlier(kind):
    gen = np.random.default_rng(12)
    p = random_hpd(gen, 2)
    q = 50 * random_hpd(gen, 2)
    samples = np.stack([p, p, q])
    cfg = FixedPointConfig(tolerance=1e-10, max_iterations=10000)
    med, mean = tbd_median(kind, samples, cfg), tbd_mean(kind, samples)
    assert tbd_value(kind, med, p) < tbd_value(kind, mean, p)


@pytest.mark.parametrize("kind", KINDS)
def test_median_is_local_minimum(kind):
    gen = np.random.default_rng(13)
    samples = random_hpd(gen, 4, size=5)
    r = tbd_median(kind, samples, FixedPointConfig(tolerance=1e-10, max_iterations=5000))
    obj = tbd_objective(kind, r, samples, median=True)
    assert obj <= tbd_objective(kind, samples.mean(axis=0), samples, median=True)
    assert obj <= tbd_objective(kind, tbd_mean(kind, samples), samples, median=True)
    for _ in range(100):
        h = random_hpd(gen, 4) - random_hpd(gen, 4)
        q = r + 1e-2 * np.linalg.norm(r) * h / np.linalg.norm(h)
        if is_hpd(q):
            assert tbd_objective(kind, q, samples, median=True) >= obj


@pytest.mark.parametrize("kind", KINDS)
def test_median_satisfies_stationarity(kind):
    gen = np.random.default_rng(14)
    cfg = FixedPointConfig()
    for _ in range(10):
        samples = random_hpd(gen, 4, size=8)
        r, info = tbd_median(kind, samples, cfg, return_info=True)
        assert info.iterations <= cfg.max_iterations
        assert info.residual == pytest.approx(median_residual(kind, r, samples))
        assert info.residual < 10 * cfg.tolerance


def _oracle_median_objective(kind, r, samples):
    return np.mean([np.sqrt(max(generic_tbd(kind, r, z), 0.0)) for z in samples])


@pytest.mark.parametrize("kind", KINDS)
def test_hessian_weights_match_second_difference(kind):
    gen = np.random.default_rng(17)
    y = random_hpd(gen, 4)
    d = random_hermitian(gen, 4)
    lam, vec = np.linalg.eigh(y)
    dt = vec.conj().T @ d @ vec
    quad = np.sum(_hessian_weights(DivergenceKind(kind), lam) * np.abs(dt) ** 2)
    t = 1e-4
    second = (generator_value(kind, y + t * d) - 2 * generator_value(kind, y)
              + generator_value(kind, y - t * d)) / t**2
    assert quad == pytest.approx(second, rel=1e-5)


@pytest.mark.parametrize("kind", KINDS)
def test_median_at_a_dominant_sample(kind):
    # a sample carrying most of the weight is the median; plain Weiszfeld
    # only creeps towards it
    gen = np.random.default_rng(18)
    p = random_hpd(gen, 3)
    samples = np.concatenate([np.stack([p] * 4), 5 * random_hpd(gen, 3, size=3)])
    r, info = tbd_median(kind, samples, return_info=True)
    assert info.converged and info.iterations < 200
    np.testing.assert_array_equal(r, p)
    assert info.residual == 0.0
    obj = _oracle_median_objective(kind, r, samples)
    for scale in (1e-2, 1e-4):
        for _ in range(50):
            h = random_hermitian(gen, 3)
            q = p + scale * np.linalg.norm(p) * h / np.linalg.norm(h)
            if is_hpd(q):
                assert _oracle_median_objective(kind, q, samples) >= obj


def test_tsl_median_at_small_norm_sample():
    # TSL weights 1/sqrt(1 + ||R_i||^2) favour a small sample among large ones
    gen = np.random.default_rng(19)
    small = random_hpd(gen, 4)
    samples = np.concatenate([small[None], 40 * random_hpd(gen, 4, size=7)])
    r, info = tbd_median("TSL", samples, return_info=True)
    np.testing.assert_array_equal(r, small)
    assert info.iterations < 200
    obj = _oracle_median_objective("TSL", r, samples)
    for _ in range(100):
        h = random_hermitian(gen, 4)
        q = small + 1e-3 * np.linalg.norm(small) * h / np.linalg.norm(h)
        if is_hpd(q):
            assert _oracle_median_objective("TSL", q, samples) >= obj


@pytest.mark.parametrize("kind", KINDS)
def test_interior_median_is_not_a_sample(kind):
    gen = np.random.default_rng(20)
    samples = random_hpd(gen, 4, size=8)
    r = tbd_median(kind, samples)
    assert min(generic_tbd(kind, r, z) for z in samples) > 1e-6
    obj = _oracle_median_objective(kind, r, samples)
    assert all(obj < _oracle_median_objective(kind, z, samples) for z in samples)


@pytest.mark.parametrize("kind", KINDS)
def test_median_iterates_stay_hpd(kind):
    samples = random_hpd(np.random.default_rng(15), 4, size=6)
    for t in range(1, 6):
        try:
            r = tbd_median(kind, samples, FixedPointConfig(tolerance=1e-15, max_iterations=t))
        except ConvergenceError as exc:
            r = exc.iterate
        assert is_hpd(r)


def test_median_iteration_cap():
    samples = random_hpd(np.random.default_rng(16), 4, size=6)
    with pytest.raises(ConvergenceError) as info:
        tbd_median("TLD", samples, FixedPointConfig(tolerance=1e-15, max_iterations=2))
    assert info.value.residual > 0


def test_fixed_point_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(tolerance=0)
    with pytest.raises(ValueError):
        FixedPointConfig(degeneracy_floor=-1)
