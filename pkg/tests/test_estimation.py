import math
import warnings

import numpy as np
import pytest

from conftest import constant_model
from nsgeostat.anisotropy import AnisotropyParams
from nsgeostat.covariance import Exponential, Gaussian, Matern, covariance_matrix
from nsgeostat.estimation import (
    LocalFit,
    ParameterField,
    PipelineSettings,
    anchor_grid,
    delta_cv_scores,
    estimate_anchors,
    fit_baseline,
    fit_local,
    krige_local_mean,
    model_variogram,
    nw_weights,
    orientation_objective,
    select_delta,
    select_epsilon,
    smooth_orientation,
    smooth_scalar,
)
from nsgeostat.simulation import cholesky_sample
from nsgeostat.variogram import Dataset, EstimationFailure, LagSystem, LocalVariogram


def synthetic_variogram(sigma, l1, l2, psi, family, lags=None):
    lags = lags or LagSystem.directional(6.0, 10, 4)
    h = lags.vectors()
    g = model_variogram(h, sigma, l1, l2, psi, family)
    J = lags.J
    return LocalVariogram(
        x0=np.zeros(2),
        lags=lags,
        gamma_hat=g,
        weights=np.ones(J),
        pair_counts=np.full(J, 10),
        kernel_mass=np.ones(J),
        mean_lags=h,
    )


def test_fit_exact_recovery():
    fam = Exponential(1.0)
    fit = fit_local(synthetic_variogram(1.5, 2.0, 1.0, math.pi / 4, fam), fam)
    assert fit.sigma == pytest.approx(1.5, rel=1e-3)
    assert fit.aniso.lambda1 == pytest.approx(2.0, rel=1e-3)
    assert fit.aniso.lambda2 == pytest.approx(1.0, rel=1e-3)
    assert fit.aniso.psi == pytest.approx(math.pi / 4, abs=1e-3)
    assert fit.objective < 1e-8
    assert fit.converged and not fit.at_bound


@pytest.mark.parametrize("family", [Gaussian(1.0), Matern(1.0, 1.5)])
def test_fit_exact_recovery_other_families(family):
    fit = fit_local(synthetic_variogram(0.8, 1.5, 0.6, 2.5, family), family)
    assert fit.aniso.as_tuple() == pytest.approx((1.5, 0.6, 2.5), rel=1e-3)
    assert fit.sigma == pytest.approx(0.8, rel=1e-3)


def test_fit_isotropic_truth():
    fam = Exponential(1.0)
    fit = fit_local(synthetic_variogram(1.0, 1.3, 1.3, 0.0, fam), fam)
    assert fit.aniso.lambda1 == pytest.approx(fit.aniso.lambda2, rel=1e-3)
    assert fit.aniso.lambda1 == pytest.approx(1.3, rel=1e-3)


def test_fit_flat_variogram():
    fam = Exponential(1.0)
    v = synthetic_variogram(1.0, 1.0, 1.0, 0.0, fam)
    v.gamma_hat[:] = 2.0
    fit = fit_local(v, fam)
    assert fit.sigma**2 == pytest.approx(2.0, rel=1e-6)
    assert fit.aniso.lambda2 < 0.05 * v.lags.lags[0].length
    assert fit.at_bound


def test_fit_scale_consistency():
    fam = Exponential(1.0)
    v = synthetic_variogram(1.2, 2.0, 0.7, 1.0, fam)
    noise = 1 + 0.1 * np.sin(np.arange(v.lags.J))
    v.gamma_hat = v.gamma_hat * noise
    a = fit_local(v, fam)
    v.gamma_hat = v.gamma_hat * 9.0
    b = fit_local(v, fam)
    assert b.sigma == pytest.approx(3 * a.sigma, rel=1e-6)
    assert b.aniso.as_tuple() == pytest.approx(a.aniso.as_tuple(), rel=1e-6)


def test_fit_needs_four_bins():
    fam = Exponential(1.0)
    v = synthetic_variogram(1.0, 1.0, 1.0, 0.0, fam, LagSystem.isotropic(3.0, 3))
    with pytest.raises(EstimationFailure):
        fit_local(v, fam)


def _fit(sigma=1.0, l1=1.0, l2=1.0, psi=0.0, family=None):
    return LocalFit(np.zeros(2), sigma, AnisotropyParams(l1, l2, psi), 0.0, True, family or Exponential(1.0))


def test_local_mean_examples(rng):
    locs = rng.uniform(-1, 1, (10, 2))
    d = Dataset(locs, np.full(10, 4.2))
    assert krige_local_mean(d, [0, 0], _fit(), 5.0) == pytest.approx(4.2, rel=1e-12)
    d1 = Dataset(np.array([[0.5, 0.0], [9.0, 9.0]]), np.array([7.0, -1.0]))
    assert krige_local_mean(d1, [0, 0], _fit(), 1.0) == 7.0
    with pytest.raises(EstimationFailure):
        krige_local_mean(d1, [20, 20], _fit(), 1.0)


def test_local_mean_three_collinear():
    locs = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    vals = np.array([1.0, 2.0, 6.0])
    fit = _fit(sigma=1.0, l1=1.5, l2=1.5)
    m, alpha = krige_local_mean(Dataset(locs, vals), [1, 0], fit, 5.0, return_weights=True)
    # ordinary kriging of the mean: Gamma alpha = mu 1, 1^T alpha = 1, gamma(h) = 1 - exp(-h / 1.5)
    g = lambda h: 1 - math.exp(-h / 1.5)
    G = np.array([[g(abs(i - j)) for j in range(3)] for i in range(3)])
    A = np.zeros((4, 4))
    A[:3, :3] = G
    A[:3, 3] = -1
    A[3, :3] = 1
    sol = np.linalg.solve(A, [0, 0, 0, 1])
    np.testing.assert_allclose(alpha, sol[:3], rtol=1e-10)
    assert alpha.sum() == pytest.approx(1.0, abs=1e-14)
    assert m == pytest.approx(sol[:3] @ vals, rel=1e-10)


def test_smooth_scalar_examples(rng):
    assert smooth_scalar(np.array([[1.0, 2.0]]), [5.5], [40.0, -3.0], 0.3) == 5.5
    assert smooth_scalar(np.array([[0.0, 0.0], [2.0, 0.0]]), [1.0, 3.0], [1.0, 5.0], 0.8) == pytest.approx(2.0)
    anchors = rng.uniform(0, 3, (5, 2))
    vals = rng.normal(size=5)
    x0 = np.array([1.2, 1.7])
    k = np.array([math.exp(-np.sum((a - x0) ** 2) / (2 * 0.7**2)) for a in anchors])
    assert smooth_scalar(anchors, vals, x0, 0.7) == pytest.approx(k @ vals / k.sum(), abs=1e-12)
    assert smooth_scalar(anchors, np.full(5, 2.5), x0, 0.7) == pytest.approx(2.5, abs=1e-15)


def test_smooth_scalar_far_point_no_underflow():
    anchors = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert smooth_scalar(anchors, [1.0, 3.0], [1000.0, 0.0], 0.1) == pytest.approx(3.0)


def test_smooth_orientation_examples():
    anchors = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert smooth_orientation(anchors, [0.4, 0.4], [1.0, 3.0], 1.0) == pytest.approx(0.4)
    v = smooth_orientation(anchors, [0.1, math.pi - 0.1], [1.0, 0.0], 1.0)
    assert min(v, math.pi - v) < 1e-12


def test_smooth_orientation_grid_oracle(rng):
    for _ in range(10):
        anchors = rng.uniform(0, 3, (3, 2))
        psis = rng.uniform(0, math.pi, 3)
        x0 = rng.uniform(0, 3, 2)
        v = smooth_orientation(anchors, psis, x0, 1.0)
        w = nw_weights(anchors, x0, 1.0)[0]
        grid = np.linspace(0, math.pi, 1_000_000, endpoint=False)
        obj = orientation_objective(grid, psis, w)
        best = grid[np.argmin(obj)]
        assert orientation_objective(v, psis, w) <= obj.min() + 1e-12
        d = abs(v - best)
        assert min(d, math.pi - d) < 1e-5


def test_smooth_orientation_pi_invariance(rng):
    anchors = rng.uniform(0, 3, (6, 2))
    psis = rng.uniform(0, math.pi, 6)
    x0 = rng.uniform(0, 3, (4, 2))
    shifted = psis + np.pi * rng.integers(-2, 3, 6)
    np.testing.assert_allclose(
        smooth_orientation(anchors, psis, x0, 0.9), smooth_orientation(anchors, shifted, x0, 0.9), atol=1e-12
    )


def test_select_delta(rng):
    anchors = anchor_grid(Dataset(rng.uniform(0, 10, (50, 2)), np.zeros(50)), (8, 8))
    raw = 0.3 * anchors[:, 0] + 1.0 + rng.normal(0, 0.3, len(anchors))
    cands = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    d = select_delta(anchors, raw, cands)
    assert cands[0] < d < cands[-1]
    scores = delta_cv_scores(anchors, raw, cands + [d])
    assert scores[-1] == scores[cands.index(d)]
    assert select_delta(anchors, raw, [2.0, 2.0, 2.0]) == 2.0
    with pytest.raises(ValueError):
        select_delta(anchors[:2], raw[:2], cands)


def test_select_delta_undefined():
    anchors = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    with pytest.raises(ValueError, match="undefined"):
        select_delta(anchors, [1.0, 2.0, 3.0], [0.01])


def _simulated(seed, n=150, side=10.0, family=None, sigma=1.0, l1=1.5, l2=1.0, psi=0.5):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, side, (n, 2))
    m = constant_model(family or Exponential(1.0), sigma=sigma, l1=l1, l2=l2, psi=psi, mean=2.0)
    y = cholesky_sample(covariance_matrix(pts, m), 1, seed=seed + 1)[0] + 2.0
    return Dataset(pts, y)


def test_estimate_anchors_and_field():
    d = _simulated(0)
    pf = estimate_anchors(d, 3.0, Exponential(1.0), anchor_dims=(4, 4))
    assert pf.m == 16
    with pytest.raises(ValueError):
        pf.mean([[1.0, 1.0]])
    pf = pf.with_delta(2.0)
    e = pf.evaluate(np.array([[5.0, 5.0], [1.0, 9.0]]))
    assert np.all(e["sigma"] > 0) and np.all(e["lambda1"] >= e["lambda2"])
    assert np.all((e["psi"] >= 0) & (e["psi"] < math.pi))
    model = pf.to_model()
    v = model.at(np.array([[5.0, 5.0]]))
    assert v.sigma[0] == pytest.approx(e["sigma"][0])


def test_field_tends_to_raw_at_anchor():
    d = _simulated(1)
    pf = estimate_anchors(d, 3.0, Exponential(1.0), anchor_dims=(3, 3)).with_delta(1e-3)
    e = pf.evaluate(pf.anchors)
    np.testing.assert_allclose(e["sigma"], pf.raw_sigma, rtol=1e-9)
    np.testing.assert_allclose(e["mean"], pf.raw_mean, rtol=1e-9)


def test_translation_equivariance():
    d = _simulated(2, n=100)
    shift = np.array([250.0, -80.0])
    a = estimate_anchors(d, 3.0, Exponential(1.0), anchor_dims=(3, 3))
    b = estimate_anchors(Dataset(d.locations + shift, d.values), 3.0, Exponential(1.0), anchor_dims=(3, 3))
    np.testing.assert_allclose(b.anchors, a.anchors + shift, rtol=1e-12)
    np.testing.assert_allclose(b.raw_sigma, a.raw_sigma, rtol=1e-5)
    np.testing.assert_allclose(b.raw_lambda1, a.raw_lambda1, rtol=1e-5)


def test_select_epsilon_single_candidate():
    d = _simulated(3, n=30)
    assert select_epsilon(d, [1.7], PipelineSettings(Exponential(1.0))) == 1.7


def test_select_epsilon_prefers_moderate():
    d = _simulated(4, n=200)
    s = PipelineSettings(Exponential(1.0), anchor_dims=(5, 5), delta=2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        best = select_epsilon(d, [0.4, 2.0, 4.0], s)
    assert best != 0.4


def test_fit_baseline():
    d = _simulated(5, n=200, sigma=1.5)
    b = fit_baseline(d)
    assert b.mean == pytest.approx(d.values.mean())
    assert 0.5 * np.var(d.values) < b.total_sill < 3.0 * np.var(d.values)
