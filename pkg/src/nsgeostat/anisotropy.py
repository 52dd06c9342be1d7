"""Locally varying geometric anisotropy in two dimensions.

An anisotropy is described either by its spectral parameters
``(lambda1, lambda2, psi)`` or by the 2x2 SPD matrix
``Sigma = Psi diag(lambda1**2, lambda2**2) Psi^T`` whose major eigenvector
points at angle ``psi`` (counter-clockwise from the x axis).

Batched helpers operate on arrays of shape ``(..., 2, 2)`` and use the
explicit 2x2 determinant/inverse formulas so they broadcast cheaply.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TIE_RTOL = 1e-12


class NotSPDError(ValueError):
    """Raised when a matrix expected to be symmetric positive definite is not."""


def _reduce_angle(psi: float) -> float:
    psi = math.fmod(float(psi), math.pi)
    if psi < 0.0:
        psi += math.pi
    # fmod can return pi itself after the shift for tiny negative inputs
    if psi >= math.pi:
        psi = 0.0
    return psi


@dataclass(frozen=True)
class AnisotropyParams:
    """Spectral parameters of a 2-D geometric anisotropy.

    Construction canonicalizes the triple: ranges are swapped (and the
    azimuth rotated by pi/2) if ``lambda1 < lambda2``, the azimuth is
    reduced mod pi, and isotropic triples get ``psi = 0``.
    """

    lambda1: float
    lambda2: float
    psi: float = 0.0

    def __post_init__(self):
        l1, l2, psi = float(self.lambda1), float(self.lambda2), float(self.psi)
        if not (l1 > 0.0 and l2 > 0.0) or not (math.isfinite(l1) and math.isfinite(l2)):
            raise ValueError(f"ranges must be positive and finite, got ({l1}, {l2})")
        if not math.isfinite(psi):
            raise ValueError(f"azimuth must be finite, got {psi}")
        if l1 < l2:
            l1, l2 = l2, l1
            psi += math.pi / 2
        psi = _reduce_angle(psi)
        if l1 - l2 <= _TIE_RTOL * l1:
            psi = 0.0
        object.__setattr__(self, "lambda1", l1)
        object.__setattr__(self, "lambda2", l2)
        object.__setattr__(self, "psi", psi)

    @property
    def ratio(self) -> float:
        return self.lambda1 / self.lambda2

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.psi)


def check_spd(m) -> np.ndarray:
    """Return ``m`` as a float (2, 2) array, raising NotSPDError if it is not SPD."""
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise NotSPDError(f"expected a 2x2 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotSPDError("matrix has non-finite entries")
    scale = max(abs(m[0, 1]), abs(m[1, 0]), abs(m[0, 0]), abs(m[1, 1]), 1e-300)
    if abs(m[0, 1] - m[1, 0]) > 1e-12 * scale:
        raise NotSPDError("matrix is not symmetric")
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if not (det > 0.0 and m[0, 0] + m[1, 1] > 0.0):
        raise NotSPDError(f"matrix is not positive definite (det={det:g})")
    return m


def params_to_matrix(p: AnisotropyParams) -> np.ndarray:
    """Sigma = Psi diag(lambda1^2, lambda2^2) Psi^T."""
    return spectral_to_matrices(p.lambda1, p.lambda2, p.psi)


def spectral_to_matrices(lambda1, lambda2, psi) -> np.ndarray:
    """Vectorized ``params_to_matrix``; returns shape ``broadcast + (2, 2)``."""
    l1 = np.asarray(lambda1, dtype=float)
    l2 = np.asarray(lambda2, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(l1 <= 0.0) or np.any(l2 <= 0.0):
        raise ValueError("ranges must be positive")
    l1, l2, psi = np.broadcast_arrays(l1, l2, psi)
    c, s = np.cos(psi), np.sin(psi)
    a, b = l1 * l1, l2 * l2
    out = np.empty(l1.shape + (2, 2))
    out[..., 0, 0] = a * c * c + b * s * s
    out[..., 1, 1] = a * s * s + b * c * c
    out[..., 0, 1] = out[..., 1, 0] = (a - b) * c * s
    return out


def matrix_to_params(m) -> AnisotropyParams:
    """Inverse of :func:`params_to_matrix` with the canonical ordering."""
    m = check_spd(m)
    a, b, c = m[0, 0], m[1, 1], 0.5 * (m[0, 1] + m[1, 0])
    half_tr = 0.5 * (a + b)
    disc = math.hypot(0.5 * (a - b), c)
    e1 = half_tr + disc
    # product form avoids cancellation for the small eigenvalue
    e2 = (a * b - c * c) / e1
    if disc <= _TIE_RTOL * e1:
        return AnisotropyParams(math.sqrt(e1), math.sqrt(e1), 0.0)
    psi = 0.5 * math.atan2(2.0 * c, a - b)
    return AnisotropyParams(math.sqrt(e1), math.sqrt(e2), psi)


def _det(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def det2(m) -> np.ndarray:
    """Determinant of (a stack of) 2x2 matrices."""
    return _det(np.asarray(m, dtype=float))


def phi(sx, sy) -> np.ndarray | float:
    """Prefactor |Sx|^1/4 |Sy|^1/4 |(Sx+Sy)/2|^-1/2; broadcasts over leading axes."""
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    avg = 0.5 * (sx + sy)
    dx, dy, da = _det(sx), _det(sy), _det(avg)
    if np.any(da <= 0.0):
        raise NotSPDError("average of the anisotropy matrices is singular")
    out = np.sqrt(np.sqrt(dx * dy)) / np.sqrt(da)
    return float(out) if out.ndim == 0 else out


def q_form(sx, sy, h) -> np.ndarray | float:
    """Q(h) = h^T ((Sx+Sy)/2)^-1 h; broadcasts over leading axes."""
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    h = np.asarray(h, dtype=float)
    avg = 0.5 * (sx + sy)
    da = _det(avg)
    if np.any(da <= 0.0):
        raise NotSPDError("average of the anisotropy matrices is singular")
    h0, h1 = h[..., 0], h[..., 1]
    num = avg[..., 1, 1] * h0 * h0 - 2.0 * avg[..., 0, 1] * h0 * h1 + avg[..., 0, 0] * h1 * h1
    out = np.maximum(num / da, 0.0)
    return float(out) if out.ndim == 0 else out


def canonicalize(lambda1, lambda2, psi):
    """Vectorized canonical form: returns ``(l1, l2, psi)`` arrays with l1 >= l2, psi in [0, pi)."""
    l1 = np.asarray(lambda1, dtype=float).copy()
    l2 = np.asarray(lambda2, dtype=float).copy()
    psi = np.asarray(psi, dtype=float).copy()
    l1, l2, psi = (np.array(v) for v in np.broadcast_arrays(l1, l2, psi))
    swap = l1 < l2
    l1[swap], l2[swap] = l2[swap], l1[swap].copy()
    psi = np.where(swap, psi + np.pi / 2, psi)
    psi = np.mod(psi, np.pi)
    psi = np.where(psi >= np.pi, 0.0, psi)
    psi = np.where(l1 - l2 <= _TIE_RTOL * l1, 0.0, psi)
    return l1, l2, psi
