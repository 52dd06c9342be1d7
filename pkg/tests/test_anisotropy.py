import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsgeostat.anisotropy import (
    AnisotropyParams,
    NotSPDError,
    check_spd,
    matrix_to_params,
    params_to_matrix,
    phi,
    q_form,
    spectral_to_matrices,
)

pos = st.floats(0.05, 20.0)
angle = st.floats(-10.0, 10.0)


def test_isotropic_is_identity():
    np.testing.assert_allclose(params_to_matrix(AnisotropyParams(1, 1, 0.7)), np.eye(2), atol=1e-15)


def test_axis_aligned():
    np.testing.assert_allclose(params_to_matrix(AnisotropyParams(2, 1, 0)), np.diag([4.0, 1.0]), atol=1e-15)
    np.testing.assert_allclose(params_to_matrix(AnisotropyParams(2, 1, math.pi / 2)), np.diag([1.0, 4.0]), atol=1e-14)


def test_major_axis_direction():
    m = params_to_matrix(AnisotropyParams(3, 1, 0.4))
    u = np.array([math.cos(0.4), math.sin(0.4)])
    np.testing.assert_allclose(m @ u, 9 * u, atol=1e-13)


def test_matrix_to_params_examples():
    p = matrix_to_params(np.diag([4.0, 1.0]))
    assert p.as_tuple() == pytest.approx((2, 1, 0))
    p = matrix_to_params(np.eye(2))
    assert p.as_tuple() == (1.0, 1.0, 0.0)
    c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
    rot = np.array([[c, -s], [s, c]])
    p = matrix_to_params(rot @ np.diag([9.0, 1.0]) @ rot.T)
    assert p.as_tuple() == pytest.approx((3, 1, math.pi / 6), abs=1e-12)


def test_canonical_form():
    p = AnisotropyParams(1, 2, 0.3)
    assert p.lambda1 == 2 and p.lambda2 == 1
    assert p.psi == pytest.approx(0.3 + math.pi / 2)
    assert AnisotropyParams(2, 1, 0.3 + math.pi).psi == pytest.approx(0.3)
    assert AnisotropyParams(2, 1, -0.3).psi == pytest.approx(math.pi - 0.3)
    assert AnisotropyParams(1.5, 1.5, 2.0).psi == 0.0


@pytest.mark.parametrize("bad", [(0, 1, 0), (-1, 1, 0), (1, math.inf, 0), (1, 1, math.nan)])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        AnisotropyParams(*bad)


def test_check_spd_rejects():
    with pytest.raises(NotSPDError):
        check_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotSPDError):
        check_spd(np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(NotSPDError):
        matrix_to_params(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_phi_examples():
    assert phi(np.eye(2), np.eye(2)) == pytest.approx(1.0)
    assert phi(np.eye(2), 4 * np.eye(2)) == pytest.approx(0.8)
    assert phi(np.diag([1.0, 4.0]), np.diag([4.0, 1.0])) == pytest.approx(0.8)


def test_q_form_examples():
    assert q_form(np.eye(2), np.eye(2), np.array([3.0, 4.0])) == pytest.approx(25.0)
    assert q_form(np.eye(2), 4 * np.eye(2), np.array([1.0, 0.0])) == pytest.approx(0.4)
    assert q_form(np.diag([2.0, 3.0]), np.eye(2), np.zeros(2)) == 0.0


@settings(max_examples=200, deadline=None)
@given(pos, pos, angle)
def test_round_trip(l1, l2, psi):
    p = AnisotropyParams(l1, l2, psi)
    q = matrix_to_params(params_to_matrix(p))
    assert q.lambda1 == pytest.approx(p.lambda1, rel=1e-9)
    assert q.lambda2 == pytest.approx(p.lambda2, rel=1e-9)
    if p.ratio > 1 + 1e-6:
        d = abs(q.psi - p.psi)
        assert min(d, math.pi - d) < 1e-6


@settings(max_examples=200, deadline=None)
@given(pos, pos, angle, pos, pos, angle)
def test_phi_bounds_and_symmetry(a, b, c, d, e, f):
    sx = params_to_matrix(AnisotropyParams(a, b, c))
    sy = params_to_matrix(AnisotropyParams(d, e, f))
    v = phi(sx, sy)
    assert 0 < v <= 1 + 1e-12
    assert v == pytest.approx(phi(sy, sx), rel=1e-12)


def test_vectorized_matches_scalar(rng):
    l1 = rng.uniform(0.5, 3, 20)
    l2 = rng.uniform(0.5, 3, 20)
    psi = rng.uniform(0, 7, 20)
    mats = spectral_to_matrices(l1, l2, psi)
    for i in range(20):
        np.testing.assert_allclose(mats[i], params_to_matrix(AnisotropyParams(l1[i], l2[i], psi[i])), atol=1e-12)
