import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SmoothField, constant_model, random_model
from nsgeostat.covariance import (
    Cauchy,
    CovarianceDomainError,
    ExponentialStructure,
    Exponential,
    Gaussian,
    Matern,
    Nugget,
    NsModel,
    SphericalStructure,
    StationaryBaseline,
    correlation_matrix,
    covariance_matrix,
    make_family,
    matern_normalized,
    ns_correlation,
    ns_covariance,
    stationary_covariance,
)


def test_exponential_stationary_reduction():
    m = constant_model(Exponential(1.0))
    assert ns_correlation([0, 0], [1, 0], m) == pytest.approx(math.exp(-1), rel=1e-12)


def test_cauchy_stationary_reduction():
    m = constant_model(Cauchy(1.0, 1.0))
    assert ns_correlation([0, 0], [0, 1], m) == pytest.approx(0.5, rel=1e-12)


def test_gaussian_stationary_reduction():
    m = constant_model(Gaussian(2.0))
    assert ns_correlation([0, 0], [1, 1], m) == pytest.approx(math.exp(-2 / 4), rel=1e-12)


def test_matern_half_equals_exponential(rng):
    aniso = random_model(rng).anisotropy
    me = NsModel(Exponential(1.0), anisotropy=aniso)
    mm = NsModel(Matern(1.0, 0.5), anisotropy=aniso)
    x = rng.uniform(0, 5, (100, 2))
    y = rng.uniform(0, 5, (100, 2))
    np.testing.assert_allclose(ns_correlation(x, y, mm), ns_correlation(x, y, me), rtol=1e-10, atol=1e-14)


def test_matern_normalized_limits():
    assert matern_normalized(0.0, 2.5) == 1.0
    assert matern_normalized(1e-200, 40.0) == pytest.approx(1.0)
    v = matern_normalized(np.linspace(1e-6, 30, 200), 3.0)
    assert np.all(np.diff(v) <= 1e-15)
    with pytest.raises(CovarianceDomainError):
        matern_normalized(1.0, 0.0)
    with pytest.raises(CovarianceDomainError):
        matern_normalized(1.0, 60.0)


def test_family_validation():
    with pytest.raises(ValueError):
        Gaussian(0.0)
    with pytest.raises(ValueError):
        Cauchy(1.0, -1.0)
    with pytest.raises(ValueError):
        make_family("spherical")


def test_varying_matern_constant_field_matches_constant():
    m1 = constant_model(Matern(1.0, 1.7), l1=2, l2=1, psi=0.3)
    m2 = constant_model(Matern(1.0, lambda p: np.full(len(np.atleast_2d(p)), 1.7)), l1=2, l2=1, psi=0.3)
    x = np.array([[0.0, 0.0], [1.0, 2.0]])
    y = np.array([[0.5, 0.3], [-1.0, 0.0]])
    np.testing.assert_allclose(ns_correlation(x, y, m1), ns_correlation(x, y, m2), rtol=1e-12)


def test_ns_covariance_examples(rng):
    for fam in (Gaussian(1.0), Exponential(1.0), Matern(1.0, 1.2), Cauchy(1.0, 2.0)):
        m = constant_model(fam, sigma=2.0)
        assert ns_covariance([1, 1], [1, 1], m) == pytest.approx(4.0)
    m = random_model(rng)
    x = rng.uniform(0, 5, (20, 2))
    y = rng.uniform(0, 5, (20, 2))
    s = m.sigma
    np.testing.assert_allclose(ns_covariance(x, y, m), s(x) * s(y) * ns_correlation(x, y, m), rtol=1e-13)


def test_sigma_product_contract():
    def sig(p):
        p = np.atleast_2d(p)
        return np.where(p[:, 0] < 0.5, 1.0, 3.0)

    fam = Exponential(1.0)
    m = NsModel(fam, sigma=sig)
    rho = ns_correlation([0, 0], [1, 0], m)
    assert ns_covariance([0, 0], [1, 0], m) == pytest.approx(3.0 * rho)


def test_covariance_matrix_examples(rng):
    m = constant_model(Exponential(1.0), sigma=2.0)
    np.testing.assert_allclose(covariance_matrix(np.array([[0.3, 0.2]]), m), [[4.0]])
    far = np.array([[0.0, 0.0], [1e3, 0.0], [0.0, 1e3]])
    m = random_model(rng, "exponential")
    c = covariance_matrix(far, m)
    np.testing.assert_allclose(c, np.diag(m.sigma(far) ** 2), atol=1e-12)
    pts = rng.uniform(0, 10, (50, 2))
    np.linalg.cholesky(covariance_matrix(pts, m))


def test_duplicate_points_warn():
    m = constant_model(Exponential(1.0))
    with pytest.warns(UserWarning, match="duplicate"):
        covariance_matrix(np.array([[0.0, 0.0], [0.0, 0.0]]), m)


@pytest.mark.parametrize("family", ["gaussian", "exponential", "matern", "cauchy"])
def test_symmetry_and_unit_diagonal(rng, family):
    m = random_model(rng, family, varying=family in ("matern", "cauchy"))
    pts = rng.uniform(0, 8, (30, 2))
    r = correlation_matrix(pts, m)
    np.testing.assert_allclose(r, r.T, atol=1e-15)
    np.testing.assert_allclose(np.diag(r), 1.0)
    assert np.all(np.abs(r) <= 1 + 1e-12)
    x, y = pts[:10], pts[10:20]
    np.testing.assert_allclose(ns_correlation(x, y, m), ns_correlation(y, x, m), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["gaussian", "exponential", "matern", "cauchy"]), st.booleans())
def test_positive_semidefinite(seed, family, varying):
    rng = np.random.default_rng(seed)
    m = random_model(rng, family, varying)
    pts = rng.uniform(0, 10, (25, 2))
    ev = np.linalg.eigvalsh(covariance_matrix(pts, m))
    assert ev.min() >= -1e-8 * ev.max()


def test_translation_of_constant_model(rng):
    m = constant_model(Matern(1.0, 2.0), sigma=1.3, l1=2, l2=0.7, psi=1.0)
    x = rng.uniform(0, 5, (10, 2))
    y = rng.uniform(0, 5, (10, 2))
    shift = np.array([100.0, -40.0])
    np.testing.assert_allclose(ns_covariance(x, y, m), ns_covariance(x + shift, y + shift, m), rtol=1e-12)


def test_invalid_sigma_field():
    m = NsModel(Exponential(1.0), sigma=lambda p: -np.ones(len(np.atleast_2d(p))))
    with pytest.raises(ValueError):
        ns_covariance([0, 0], [1, 1], m)


def test_stationary_baseline_examples():
    nug = StationaryBaseline([Nugget(1.0)])
    assert stationary_covariance(np.zeros(2), nug) == 1.0
    assert stationary_covariance(np.array([0.1, 0.0]), nug) == 0.0
    sph = StationaryBaseline([SphericalStructure(1.0, 2.0)])
    assert stationary_covariance(np.array([2.0, 0.0]), sph) == pytest.approx(0.0, abs=1e-15)
    assert stationary_covariance(np.array([1.0, 0.0]), sph) == pytest.approx(0.3125)
    nested = StationaryBaseline([Nugget(0.5), ExponentialStructure(1.0, 2.0), SphericalStructure(2.0, 3.0)])
    assert nested.total_sill == 3.5
    assert stationary_covariance(np.zeros(2), nested) == pytest.approx(3.5)


def test_baseline_matches_ns_constant(rng):
    base = StationaryBaseline([ExponentialStructure(2.25, (2.0, 0.8), 0.6)])
    m = constant_model(Exponential(1.0), sigma=1.5, l1=2.0, l2=0.8, psi=0.6)
    x = rng.uniform(0, 5, (30, 2))
    y = rng.uniform(0, 5, (30, 2))
    np.testing.assert_allclose(stationary_covariance(x - y, base), ns_covariance(x, y, m), rtol=1e-12)
