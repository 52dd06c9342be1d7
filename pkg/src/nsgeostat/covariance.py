"""Closed-form non-stationary correlation and covariance families.

The non-stationary correlation between two sites is

    R(x, y) = phi_xy * R_S(sqrt(Q_xy(x - y)))

where ``phi_xy`` and ``Q_xy`` come from the local anisotropy matrices at
``x`` and ``y`` (see :mod:`nsgeostat.anisotropy`).  The Matern and Cauchy
families additionally accept a spatially varying smoothness / long-range
parameter, in which case the pair uses the average of the two local values
and a Gamma-function ratio prefactor keeps ``R(x, x) = 1``.

Parameter fields are plain callables taking an ``(n, 2)`` array of points:

* ``mean(pts) -> (n,)``
* ``sigma(pts) -> (n,)``
* ``anisotropy(pts) -> (lambda1, lambda2, psi)`` each ``(n,)``
* ``Matern.nu`` / ``Cauchy.alpha`` may be a float or ``pts -> (n,)``
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import special

from .anisotropy import AnisotropyParams, spectral_to_matrices

ScalarField = Callable[[np.ndarray], np.ndarray]
ParamLike = Union[float, ScalarField]

MAX_MATERN_ORDER = 50.0
_TINY_TAU = 1e-12


class CovarianceDomainError(ValueError):
    """A correlation family was evaluated outside its supported domain."""


def as_points(pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have 2 coordinates, got shape {pts.shape}")
    return pts


# --------------------------------------------------------------------------
# parameter fields
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ConstantField:
    """Scalar field returning the same value everywhere."""

    value: float

    def __call__(self, pts) -> np.ndarray:
        pts = as_points(pts)
        return np.full(pts.shape[0], float(self.value))


@dataclass(frozen=True)
class ConstantAnisotropy:
    params: AnisotropyParams

    def __call__(self, pts):
        n = as_points(pts).shape[0]
        p = self.params
        return np.full(n, p.lambda1), np.full(n, p.lambda2), np.full(n, p.psi)


def _as_field(value: ParamLike) -> ScalarField:
    if callable(value):
        return value
    return ConstantField(float(value))


# --------------------------------------------------------------------------
# correlation families
# --------------------------------------------------------------------------
def matern_normalized(tau, nu) -> np.ndarray:
    """tau^nu K_nu(tau) / (2^(nu-1) Gamma(nu)), equal to 1 at tau = 0.

    Valid for ``0 < nu <= 50``.  Tiny arguments use the small-tau expansion
    instead of evaluating the Bessel function where it would overflow.
    """
    tau = np.asarray(tau, dtype=float)
    nu = np.asarray(nu, dtype=float)
    tau, nu = np.broadcast_arrays(tau, nu)
    if np.any(nu <= 0.0) or np.any(nu > MAX_MATERN_ORDER) or not np.all(np.isfinite(nu)):
        raise CovarianceDomainError(f"Matern order must lie in (0, {MAX_MATERN_ORDER}]")
    out = np.ones(tau.shape)
    pos = tau > _TINY_TAU
    if np.any(pos):
        t, v = tau[pos], nu[pos]
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            kv = special.kv(v, t)
            val = np.exp(v * np.log(t) - (v - 1.0) * math.log(2.0) - special.gammaln(v)) * kv
        bad = ~np.isfinite(val)
        if np.any(bad):
            # K_nu overflowed: tau is tiny relative to nu (only happens for nu > 1)
            vb, tb = v[bad], t[bad]
            if np.any(vb <= 1.0):
                raise CovarianceDomainError("Bessel evaluation overflow")
            val[bad] = 1.0 - tb * tb / (4.0 * (vb - 1.0))
        out[pos] = np.clip(val, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class Gaussian:
    """R_S(tau) = exp(-tau^2 / a^2)."""

    a: float = 1.0
    name = "gaussian"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scale a must be positive")

    def stationary(self, tau, param=None):
        tau = np.asarray(tau, dtype=float)
        return np.exp(-(tau / self.a) ** 2)

    def local_params(self, pts):
        return None

    def pair_factor(self, q, px, py):
        return np.exp(-q / self.a**2)


@dataclass(frozen=True)
class Exponential:
    """R_S(tau) = exp(-tau / a)."""

    a: float = 1.0
    name = "exponential"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scale a must be positive")

    def stationary(self, tau, param=None):
        tau = np.asarray(tau, dtype=float)
        return np.exp(-tau / self.a)

    def local_params(self, pts):
        return None

    def pair_factor(self, q, px, py):
        return np.exp(-np.sqrt(q) / self.a)


@dataclass(frozen=True)
class Matern:
    """Matern family; ``nu`` is a positive constant or a scalar field."""

    a: float = 1.0
    nu: ParamLike = 1.5
    name = "matern"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scale a must be positive")
        if not callable(self.nu) and not 0 < float(self.nu) <= MAX_MATERN_ORDER:
            raise CovarianceDomainError(f"Matern order must lie in (0, {MAX_MATERN_ORDER}]")

    @property
    def varying(self) -> bool:
        return callable(self.nu)

    @staticmethod
    def order(nu_x, nu_y):
        """Order of the Bessel function used for a pair of sites."""
        return 0.5 * (np.asarray(nu_x, dtype=float) + np.asarray(nu_y, dtype=float))

    def stationary(self, tau, param=None):
        nu = self.nu if param is None else param
        return matern_normalized(np.asarray(tau, dtype=float) / self.a, nu)

    def local_params(self, pts):
        vals = _as_field(self.nu)(pts)
        if np.any(vals <= 0) or np.any(vals > MAX_MATERN_ORDER):
            raise CovarianceDomainError(f"Matern order field outside (0, {MAX_MATERN_ORDER}]")
        return vals

    def pair_factor(self, q, px, py):
        nu = self.order(px, py)
        core = matern_normalized(np.sqrt(q) / self.a, nu)
        if not self.varying:
            return core
        pref = np.exp(special.gammaln(nu) - 0.5 * (special.gammaln(px) + special.gammaln(py)))
        return pref * core


@dataclass(frozen=True)
class Cauchy:
    """R_S(tau) = (1 + tau^2 / a^2)^-alpha; ``alpha`` constant or a scalar field."""

    a: float = 1.0
    alpha: ParamLike = 1.0
    name = "cauchy"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scale a must be positive")
        if not callable(self.alpha) and not float(self.alpha) > 0:
            raise CovarianceDomainError("Cauchy alpha must be positive")

    @property
    def varying(self) -> bool:
        return callable(self.alpha)

    @staticmethod
    def order(alpha_x, alpha_y):
        return 0.5 * (np.asarray(alpha_x, dtype=float) + np.asarray(alpha_y, dtype=float))

    def stationary(self, tau, param=None):
        alpha = self.alpha if param is None else param
        tau = np.asarray(tau, dtype=float)
        return (1.0 + (tau / self.a) ** 2) ** (-np.asarray(alpha, dtype=float))

    def local_params(self, pts):
        vals = _as_field(self.alpha)(pts)
        if np.any(vals <= 0):
            raise CovarianceDomainError("Cauchy alpha field must be positive")
        return vals

    def pair_factor(self, q, px, py):
        alpha = self.order(px, py)
        core = (1.0 + q / self.a**2) ** (-alpha)
        if not self.varying:
            return core
        pref = np.exp(special.gammaln(alpha) - 0.5 * (special.gammaln(px) + special.gammaln(py)))
        return pref * core


CorrelationFamily = Union[Gaussian, Exponential, Matern, Cauchy]
FAMILIES = {"gaussian": Gaussian, "exponential": Exponential, "matern": Matern, "cauchy": Cauchy}


def make_family(name: str, a: float = 1.0, nu: float = 1.5, alpha: float = 1.0) -> CorrelationFamily:
    name = name.lower()
    if name == "matern":
        return Matern(a=a, nu=nu)
    if name == "cauchy":
        return Cauchy(a=a, alpha=alpha)
    if name not in FAMILIES:
        raise ValueError(f"unknown correlation family {name!r}; choose from {sorted(FAMILIES)}")
    return FAMILIES[name](a=a)


# --------------------------------------------------------------------------
# the non-stationary model
# --------------------------------------------------------------------------
@dataclass
class SiteValues:
    """Parameter fields evaluated at a set of sites."""

    points: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    matrices: np.ndarray  # (n, 2, 2)
    family_param: np.ndarray | None


@dataclass
class NsModel:
    """Non-stationary model Y(x) = m(x) + sigma(x) Z(x)."""

    family: CorrelationFamily
    sigma: ScalarField = field(default_factory=lambda: ConstantField(1.0))
    mean: ScalarField = field(default_factory=lambda: ConstantField(0.0))
    anisotropy: Callable = field(default_factory=lambda: ConstantAnisotropy(AnisotropyParams(1.0, 1.0)))

    def at(self, pts) -> SiteValues:
        pts = as_points(pts)
        l1, l2, psi = self.anisotropy(pts)
        sig = np.asarray(self.sigma(pts), dtype=float)
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ValueError("standard deviation field must be non-negative and finite")
        return SiteValues(
            points=pts,
            mean=np.asarray(self.mean(pts), dtype=float),
            sigma=sig,
            matrices=spectral_to_matrices(l1, l2, psi),
            family_param=self.family.local_params(pts),
        )


def _pair_correlation(family, vx: SiteValues, vy: SiteValues, outer: bool) -> np.ndarray:
    """Correlation either elementwise (outer=False) or for all pairs (outer=True)."""
    if outer:
        sx = vx.matrices[:, None]
        sy = vy.matrices[None, :]
        h = vx.points[:, None, :] - vy.points[None, :, :]
        px = None if vx.family_param is None else vx.family_param[:, None]
        py = None if vy.family_param is None else vy.family_param[None, :]
    else:
        sx, sy = vx.matrices, vy.matrices
        h = vx.points - vy.points
        px, py = vx.family_param, vy.family_param
    avg = 0.5 * (sx + sy)
    da = avg[..., 0, 0] * avg[..., 1, 1] - avg[..., 0, 1] * avg[..., 1, 0]
    dx = sx[..., 0, 0] * sx[..., 1, 1] - sx[..., 0, 1] ** 2
    dy = sy[..., 0, 0] * sy[..., 1, 1] - sy[..., 0, 1] ** 2
    pref = np.sqrt(np.sqrt(dx * dy) / da)
    h0, h1 = h[..., 0], h[..., 1]
    q = (avg[..., 1, 1] * h0 * h0 - 2.0 * avg[..., 0, 1] * h0 * h1 + avg[..., 0, 0] * h1 * h1) / da
    q = np.maximum(q, 0.0)
    return pref * family.pair_factor(q, px, py)


def ns_correlation(x, y, model: NsModel):
    """Non-stationary correlation between paired sites ``x[i]`` and ``y[i]``.

    Scalar in, scalar out when both arguments are single points.
    """
    single = np.ndim(x) == 1 and np.ndim(y) == 1
    vx, vy = model.at(x), model.at(y)
    if vx.points.shape != vy.points.shape:
        raise ValueError("x and y must hold the same number of points")
    r = _pair_correlation(model.family, vx, vy, outer=False)
    return float(r[0]) if single else r


def ns_covariance(x, y, model: NsModel):
    """C(x, y) = sigma(x) sigma(y) R(x, y) for paired sites."""
    single = np.ndim(x) == 1 and np.ndim(y) == 1
    vx, vy = model.at(x), model.at(y)
    if vx.points.shape != vy.points.shape:
        raise ValueError("x and y must hold the same number of points")
    c = vx.sigma * vy.sigma * _pair_correlation(model.family, vx, vy, outer=False)
    return float(c[0]) if single else c


def correlation_matrix(x, model: NsModel, y=None) -> np.ndarray:
    """Cross-correlation matrix between site sets ``x`` (rows) and ``y`` (columns)."""
    vx = model.at(x)
    vy = vx if y is None else model.at(y)
    r = _pair_correlation(model.family, vx, vy, outer=True)
    if y is None:
        r = 0.5 * (r + r.T)
        np.fill_diagonal(r, 1.0)
    return r


def cross_covariance(x, y, model: NsModel, vx: SiteValues | None = None, vy: SiteValues | None = None) -> np.ndarray:
    vx = model.at(x) if vx is None else vx
    vy = model.at(y) if vy is None else vy
    r = _pair_correlation(model.family, vx, vy, outer=True)
    return vx.sigma[:, None] * r * vy.sigma[None, :]


def has_duplicates(points, tol: float = 1e-9) -> bool:
    from scipy.spatial import cKDTree

    pts = as_points(points)
    if len(pts) < 2:
        return False
    return len(cKDTree(pts).query_pairs(tol)) > 0


def covariance_matrix(points, model: NsModel, check_duplicates: bool = True) -> np.ndarray:
    """Covariance matrix of the model at ``points`` (symmetric, PSD)."""
    pts = as_points(points)
    if check_duplicates and has_duplicates(pts):
        warnings.warn("duplicate locations: covariance matrix is singular", stacklevel=2)
    v = model.at(pts)
    r = _pair_correlation(model.family, v, v, outer=True)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return v.sigma[:, None] * r * v.sigma[None, :]


# --------------------------------------------------------------------------
# stationary nested baseline
# --------------------------------------------------------------------------
def _aniso_distance(h: np.ndarray, ranges: tuple[float, float], azimuth: float) -> np.ndarray:
    c, s = math.cos(azimuth), math.sin(azimuth)
    u = h[..., 0] * c + h[..., 1] * s
    v = -h[..., 0] * s + h[..., 1] * c
    return np.sqrt((u / ranges[0]) ** 2 + (v / ranges[1]) ** 2)


@dataclass(frozen=True)
class Nugget:
    sill: float

    def cov(self, h):
        d = np.hypot(h[..., 0], h[..., 1])
        return np.where(d <= 1e-12, self.sill, 0.0)


@dataclass(frozen=True)
class _Structure:
    sill: float
    ranges: tuple[float, float] | float = 1.0
    azimuth: float = 0.0

    def __post_init__(self):
        r = self.ranges
        if np.isscalar(r):
            r = (float(r), float(r))
        object.__setattr__(self, "ranges", (float(r[0]), float(r[1])))
        if self.sill < 0 or min(self.ranges) <= 0:
            raise ValueError("structures need sill >= 0 and positive ranges")

    def cov(self, h):
        return self.sill * self.correlation(_aniso_distance(h, self.ranges, self.azimuth))


class ExponentialStructure(_Structure):
    def correlation(self, d):
        return np.exp(-d)


class GaussianStructure(_Structure):
    def correlation(self, d):
        return np.exp(-d * d)


class SphericalStructure(_Structure):
    def correlation(self, d):
        return np.where(d < 1.0, 1.0 - 1.5 * d + 0.5 * d**3, 0.0)


@dataclass
class StationaryBaseline:
    """Nested stationary covariance with a constant mean."""

    structures: Sequence = ()
    mean: float = 0.0

    def __post_init__(self):
        for s in self.structures:
            if s.sill < 0:
                raise ValueError("sills must be non-negative")

    @property
    def total_sill(self) -> float:
        return float(sum(s.sill for s in self.structures))

    def cov(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape[:-1])
        for s in self.structures:
            out = out + s.cov(h)
        return out


def stationary_covariance(h, model: StationaryBaseline):
    """Sum of the nested structure covariances at lag vector(s) ``h``."""
    h = np.asarray(h, dtype=float)
    out = model.cov(h)
    return float(out) if out.ndim == 0 else out
