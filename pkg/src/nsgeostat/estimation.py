"""Local parameter estimation, smoothing and hyper-parameter selection.

Pipeline for one bandwidth ``epsilon``:

1. at each anchor ``x_k`` fit ``(sigma, lambda1, lambda2, psi)`` to the local
   variogram by weighted least squares;
2. estimate the local mean by kriging of the mean inside radius ``b``;
3. smooth every raw estimate to arbitrary locations with a Gaussian
   Nadaraya-Watson smoother of bandwidth ``delta`` (orientations with the
   circular criterion of :func:`smooth_orientation`).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from .anisotropy import AnisotropyParams, canonicalize
from .covariance import (
    ConstantField,
    CorrelationFamily,
    ExponentialStructure,
    Nugget,
    NsModel,
    SphericalStructure,
    StationaryBaseline,
    _pair_correlation,
    as_points,
)
from .prediction import KrigingError, factorize, loo_residuals
from .variogram import (
    Dataset,
    EstimationFailure,
    LagSystem,
    LocalVariogram,
    PairTable,
    kernel_weights,
    local_variogram,
    matheron_variogram,
    neighborhood_radius,
)

log = logging.getLogger(__name__)

N_STARTS = 5
MAX_EVALS = 2000
F_TOL = 1e-10
RANGE_BOUND = 2.0
TIE_ANGLE = 1e-6  # minima closer than this are one minimum split by a breakpoint


@dataclass
class LocalFit:
    x0: np.ndarray
    sigma: float
    aniso: AnisotropyParams
    objective: float
    converged: bool
    family: CorrelationFamily | None = None
    at_bound: bool = False

    def variogram(self, h) -> np.ndarray:
        """Fitted stationary variogram at lag vector(s) ``h``."""
        return model_variogram(h, self.sigma, self.aniso.lambda1, self.aniso.lambda2, self.aniso.psi, self.family)


def _tau(h, l1, l2, psi):
    h = np.asarray(h, dtype=float)
    c, s = math.cos(psi), math.sin(psi)
    u = h[..., 0] * c + h[..., 1] * s
    v = -h[..., 0] * s + h[..., 1] * c
    return np.sqrt((u / l1) ** 2 + (v / l2) ** 2)


def model_variogram(h, sigma, l1, l2, psi, family) -> np.ndarray:
    """sigma^2 (1 - R_S(sqrt(h^T Sigma^-1 h))) for the local stationary model."""
    return sigma**2 * (1.0 - family.stationary(_tau(h, l1, l2, psi)))


def _family_at(family, x0):
    """Freeze a varying Matern/Cauchy parameter at ``x0`` for a local fit."""
    for attr in ("nu", "alpha"):
        val = getattr(family, attr, None)
        if callable(val):
            return replace(family, **{attr: float(val(as_points(x0))[0])})
    return family


def _initial_range(lengths, gamma):
    order = np.argsort(lengths)
    g = gamma[order]
    target = 0.632 * np.max(g)
    hit = np.nonzero(g >= target)[0]
    r = lengths[order][hit[0]] if len(hit) else lengths.max()
    return max(r, lengths.min())


def fit_local(
    vario: LocalVariogram,
    family: CorrelationFamily,
    length_scale: float | None = None,
    variance_scale: float | None = None,
) -> LocalFit:
    """Weighted least-squares fit of the local variogram.

    Minimizes ``|| w * (gamma(h_j; theta) - gamma_hat_j) ||`` over non-empty
    bins, with ``gamma`` evaluated at each bin's mean lag vector.  The sill
    enters linearly and is profiled out in closed form; the three
    anisotropy parameters are searched with bounded Nelder-Mead from
    several starts.

    ``length_scale`` and ``variance_scale`` set the search box: ranges in
    ``[1e-3, 2] * length_scale`` (a range far beyond the largest lag is not
    identifiable) and sills in ``[1e-6, 10] * variance_scale``.  They
    default to the largest lag and the largest local variogram value.
    """
    ok = ~vario.empty
    if np.count_nonzero(ok) < 4:
        raise EstimationFailure(f"need at least 4 non-empty lag bins at {vario.x0}, got {np.count_nonzero(ok)}")
    family = _family_at(family, vario.x0)
    h = vario.mean_lags[ok]
    g_hat = vario.gamma_hat[ok]
    w2 = vario.weights[ok] ** 2
    lengths = np.hypot(h[:, 0], h[:, 1])

    L = float(length_scale) if length_scale else float(vario.lags.max_distance)
    V = float(variance_scale) if variance_scale else float(max(np.max(g_hat), 1e-300))
    s_lo, s_hi = 1e-6 * V, 10.0 * V
    ll_lo, ll_hi = math.log(1e-3 * L), math.log(RANGE_BOUND * L)
    norm = float(np.sum(w2 * g_hat**2)) or 1.0

    def profile(params):
        l1, l2, psi = math.exp(params[0]), math.exp(params[1]), params[2]
        base = 1.0 - family.stationary(_tau(h, l1, l2, psi))
        den = float(np.sum(w2 * base * base))
        s = float(np.sum(w2 * base * g_hat)) / den if den > 0 else s_hi
        s = min(max(s, s_lo), s_hi)
        return s, float(np.sum(w2 * (s * base - g_hat) ** 2)) / norm

    def objective(params):
        return profile(params)[1]

    r0 = _initial_range(lengths, g_hat) / 3.0 if family.name == "exponential" else _initial_range(lengths, g_hat) / 1.7
    r0 = min(max(r0, 1.01e-3 * L), 0.99 * RANGE_BOUND * L)
    lr = math.log(r0)
    starts = [
        (lr, lr, 0.0),
        (lr + 0.5, lr - 0.2, 0.0),
        (lr + 0.5, lr - 0.2, math.pi / 4),
        (lr + 0.5, lr - 0.2, math.pi / 2),
        (lr + 0.5, lr - 0.2, 3 * math.pi / 4),
    ][:N_STARTS]
    bounds = [(ll_lo, ll_hi), (ll_lo, ll_hi), (None, None)]
    best, converged = None, False
    for x_start in starts:
        x_start = [min(max(x_start[0], ll_lo), ll_hi), min(max(x_start[1], ll_lo), ll_hi), x_start[2]]
        res = optimize.minimize(
            objective,
            x_start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-8, "fatol": F_TOL, "maxfev": MAX_EVALS, "initial_simplex": _simplex(x_start)},
        )
        converged = converged or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    if not converged:
        warnings.warn(f"local fit at {vario.x0} did not converge; best fit kept", stacklevel=2)
    s, obj = profile(best.x)
    l1, l2 = math.exp(best.x[0]), math.exp(best.x[1])
    at_bound = (
        min(best.x[0], best.x[1]) <= ll_lo + 1e-3
        or max(best.x[0], best.x[1]) >= ll_hi - 1e-3
        or s <= s_lo * (1 + 1e-9)
        or s >= s_hi * (1 - 1e-9)
    )
    return LocalFit(
        x0=np.asarray(vario.x0, dtype=float),
        sigma=math.sqrt(s),
        aniso=AnisotropyParams(l1, l2, best.x[2]),
        objective=obj * norm,
        converged=converged,
        family=family,
        at_bound=bool(at_bound),
    )


def _simplex(x):
    x = np.asarray(x, dtype=float)
    steps = np.array([0.4, 0.4, 0.4])
    return np.vstack([x] + [x + np.eye(3)[i] * steps[i] for i in range(3)])


# --------------------------------------------------------------------------
# local mean
# --------------------------------------------------------------------------
def krige_local_mean(data: Dataset, x0, fit: LocalFit, b: float, return_weights: bool = False):
    """Local kriging of the mean from the observations within ``b`` of ``x0``.

    Weights ``alpha = G^-1 1 / (1^T G^-1 1)`` from the fitted variogram
    matrix ``G``; computed through the equivalent covariance system
    ``sigma^2 R``, which is positive definite.
    """
    x0 = np.asarray(x0, dtype=float)
    d = np.hypot(*(data.locations - x0).T)
    nb = np.nonzero(d <= b)[0]
    if len(nb) == 0:
        raise EstimationFailure(f"no observation within {b:g} of {x0}")
    vals = data.values[nb]
    if len(nb) == 1:
        alpha = np.ones(1)
    else:
        pts = data.locations[nb]
        h = pts[:, None, :] - pts[None, :, :]
        cov = fit.sigma**2 - model_variogram(h, fit.sigma, fit.aniso.lambda1, fit.aniso.lambda2, fit.aniso.psi, fit.family)
        try:
            factor, _ = factorize(cov)
            u = linalg.cho_solve(factor, np.ones(len(nb)), check_finite=False)
            alpha = u / u.sum()
        except KrigingError:
            k = kernel_weights(pts, x0, b / math.sqrt(3.0))
            alpha = k / k.sum()
    m = float(alpha @ vals)
    return (m, alpha) if return_weights else m


# --------------------------------------------------------------------------
# Nadaraya-Watson smoothing
# --------------------------------------------------------------------------
def nw_weights(anchors, x0, delta: float) -> np.ndarray:
    """Gaussian Nadaraya-Watson weights, shape ``(n_targets, n_anchors)``."""
    anchors = as_points(anchors)
    x0 = as_points(x0)
    d2 = np.sum((x0[:, None, :] - anchors[None, :, :]) ** 2, axis=-1)
    logk = -0.5 * d2 / delta**2
    logk -= logk.max(axis=1, keepdims=True)
    k = np.exp(logk)
    return k / k.sum(axis=1, keepdims=True)


def smooth_scalar(anchors, raw_values, x0, delta: float):
    """Nadaraya-Watson estimate at ``x0`` (a point or an array of points)."""
    single = np.ndim(x0) == 1
    w = nw_weights(anchors, x0, delta)
    out = w @ np.asarray(raw_values, dtype=float)
    return float(out[0]) if single else out


def orientation_objective(psi0, raw_psis, weights) -> np.ndarray:
    """sum_k W_k d^2(psi0, psi_k) with the axial distance on [0, pi)."""
    psi0 = np.asarray(psi0, dtype=float)[..., None]
    diff = np.mod(psi0 - np.asarray(raw_psis) + np.pi / 2, np.pi) - np.pi / 2
    return np.sum(np.asarray(weights) * diff**2, axis=-1)


def _orientation_pieces(raw_psis):
    """Arcs of [0, pi) on which the axial-distance objective is one quadratic.

    Returns ``(lo, hi, shifted)`` where ``shifted[p, k]`` is the representative
    of ``psi_k`` (mod pi) nearest to every angle of arc ``p``.
    """
    psis = np.mod(np.asarray(raw_psis, dtype=float), np.pi)
    brk = np.sort(np.mod(psis + np.pi / 2, np.pi))
    lo = brk
    hi = np.append(brk[1:], brk[0] + np.pi)
    mid = 0.5 * (lo + hi)
    shifted = psis[None, :] + np.pi * np.round((mid[:, None] - psis[None, :]) / np.pi)
    return lo, hi, shifted


def smooth_orientation(anchors, raw_psis, x0, delta: float, return_ties: bool = False):
    """Weighted axial mean of anchor orientations at ``x0``.

    Minimizes ``sum_k W_k(x0) d^2(psi, psi_k)`` exactly: the objective is a
    quadratic on each arc between the breakpoints ``psi_k + pi/2``, so each
    arc's clipped vertex is a candidate and the best candidate wins.  Exact
    ties between distinct minima return the smaller angle and are flagged.
    """
    single = np.ndim(x0) == 1
    w = nw_weights(anchors, x0, delta)
    lo, hi, shifted = _orientation_pieces(raw_psis)
    s1 = w @ shifted.T  # (q, pieces) weighted mean of representatives
    s2 = w @ (shifted**2).T
    cand = np.clip(s1, lo[None, :], hi[None, :])
    vals = cand**2 - 2 * cand * s1 + s2
    best = np.min(vals, axis=1, keepdims=True)
    tol = 1e-12 * np.maximum(best, 1e-300) + 1e-15
    close = vals <= best + tol
    cand_mod = np.mod(cand, np.pi)
    cand_mod = np.where(cand_mod >= np.pi, 0.0, cand_mod)
    masked = np.where(close, cand_mod, np.inf)
    out = np.min(masked, axis=1)
    # distinct minima (not the same angle reached from two arcs) form a tie
    spread = np.where(close, cand_mod, -np.inf).max(axis=1) - out
    ties = np.minimum(spread, np.pi - spread) > TIE_ANGLE
    if np.any(ties):
        warnings.warn(f"{int(ties.sum())} orientation(s) with tied minima; smaller angle returned", stacklevel=2)
    if single:
        return (float(out[0]), bool(ties[0])) if return_ties else float(out[0])
    return (out, ties) if return_ties else out


# --------------------------------------------------------------------------
# parameter fields
# --------------------------------------------------------------------------
@dataclass
class ParameterField:
    """Raw anchor estimates plus their smoothed evaluator."""

    anchors: np.ndarray
    fits: list
    raw_mean: np.ndarray
    family: CorrelationFamily
    epsilon: float
    delta: float | None = None

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        self.raw_mean = np.asarray(self.raw_mean, dtype=float)

    @property
    def m(self) -> int:
        return len(self.anchors)

    @property
    def raw_sigma(self) -> np.ndarray:
        return np.array([f.sigma for f in self.fits])

    @property
    def raw_lambda1(self) -> np.ndarray:
        return np.array([f.aniso.lambda1 for f in self.fits])

    @property
    def raw_lambda2(self) -> np.ndarray:
        return np.array([f.aniso.lambda2 for f in self.fits])

    @property
    def raw_psi(self) -> np.ndarray:
        return np.array([f.aniso.psi for f in self.fits])

    def with_delta(self, delta: float) -> "ParameterField":
        return replace(self, delta=float(delta))

    def _delta(self) -> float:
        if self.delta is None:
            raise ValueError("smoothing bandwidth delta has not been set")
        return self.delta

    def evaluate(self, pts) -> dict:
        pts = as_points(pts)
        w = nw_weights(self.anchors, pts, self._delta())
        l1, l2, psi = canonicalize(
            w @ self.raw_lambda1,
            w @ self.raw_lambda2,
            smooth_orientation(self.anchors, self.raw_psi, pts, self._delta()),
        )
        return {
            "mean": w @ self.raw_mean,
            "sigma": w @ self.raw_sigma,
            "lambda1": l1,
            "lambda2": l2,
            "psi": psi,
        }

    def mean(self, pts) -> np.ndarray:
        return nw_weights(self.anchors, pts, self._delta()) @ self.raw_mean

    def sigma(self, pts) -> np.ndarray:
        return nw_weights(self.anchors, pts, self._delta()) @ self.raw_sigma

    def anisotropy(self, pts):
        e = self.evaluate(pts)
        return e["lambda1"], e["lambda2"], e["psi"]

    def to_model(self) -> NsModel:
        return NsModel(family=self.family, sigma=self.sigma, mean=self.mean, anisotropy=self.anisotropy)


def anchor_grid(data: Dataset, dims=(12, 12)) -> np.ndarray:
    """Regular grid of anchors spanning the bounding box of the data."""
    lo, hi = data.locations.min(axis=0), data.locations.max(axis=0)
    nx, ny = int(dims[0]), int(dims[1])
    xs = np.linspace(lo[0], hi[0], nx) if nx > 1 else np.array([(lo[0] + hi[0]) / 2])
    ys = np.linspace(lo[1], hi[1], ny) if ny > 1 else np.array([(lo[1] + hi[1]) / 2])
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def default_lags(epsilon: float, n_bins: int = 10, n_directions: int = 4, radius_policy: str = "uniform") -> LagSystem:
    b = neighborhood_radius(epsilon, radius_policy)
    if n_directions <= 1:
        return LagSystem.isotropic(b, n_bins)
    return LagSystem.directional(b, n_bins, n_directions)


def estimate_anchors(
    data: Dataset,
    epsilon: float,
    family: CorrelationFamily,
    anchors=None,
    anchor_dims=(12, 12),
    lags: LagSystem | None = None,
    n_directions: int = 4,
    n_bins: int = 10,
    radius_policy: str = "uniform",
) -> ParameterField:
    """Raw local fits and local means at the anchor points (``delta`` unset)."""
    if anchors is None:
        anchors = anchor_grid(data, anchor_dims)
    anchors = as_points(anchors)
    if lags is None:
        lags = default_lags(epsilon, n_bins, n_directions, radius_policy)
    b = neighborhood_radius(epsilon, radius_policy)
    table = PairTable(data, lags)
    L = lags.max_distance
    V = float(np.var(data.values)) or 1.0

    kept, fits, means = [], [], []
    for x0 in anchors:
        if kernel_weights(data.locations, x0, epsilon).sum() < 1e-12:
            log.info("anchor %s dropped: no kernel mass", x0)
            continue
        try:
            vario = local_variogram(data, x0, epsilon, lags, pairs=table)
            fit = fit_local(vario, family, length_scale=L, variance_scale=V)
            mean = krige_local_mean(data, x0, fit, b)
        except EstimationFailure as exc:
            log.info("anchor %s dropped: %s", x0, exc)
            continue
        kept.append(x0)
        fits.append(fit)
        means.append(mean)
    if not fits:
        raise EstimationFailure("no anchor could be fitted")
    return ParameterField(np.array(kept), fits, np.array(means), family, float(epsilon))


# --------------------------------------------------------------------------
# hyper-parameters
# --------------------------------------------------------------------------
def delta_cv_scores(anchors, raw_values, candidates: Sequence[float]) -> np.ndarray:
    """Leave-one-out smoothing criterion for each candidate bandwidth (NaN where undefined)."""
    anchors = as_points(anchors)
    raw = np.asarray(raw_values, dtype=float)
    if len(anchors) < 3:
        raise ValueError("bandwidth selection needs at least 3 anchors")
    scores = np.full(len(candidates), np.nan)
    for c, delta in enumerate(candidates):
        w = nw_weights(anchors, anchors, float(delta))
        self_w = np.diag(w)
        if np.any(1.0 - self_w <= 1e-12):
            continue
        smoothed = w @ raw
        scores[c] = np.mean(((raw - smoothed) / (1.0 - self_w)) ** 2)
    return scores


def select_delta(anchors, raw_values, candidates: Sequence[float]) -> float:
    """Smoothing bandwidth minimizing the leave-one-out criterion (first minimum on ties)."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate bandwidths")
    scores = delta_cv_scores(anchors, raw_values, candidates)
    if np.all(np.isnan(scores)):
        raise ValueError("criterion undefined for every candidate (self-weight equals one)")
    return float(candidates[int(np.nanargmin(scores))])


@dataclass
class PipelineSettings:
    """Knobs shared by the estimate -> smooth -> krige chain."""

    family: CorrelationFamily
    anchor_dims: tuple[int, int] = (12, 12)
    n_directions: int = 4
    n_bins: int = 10
    radius_policy: str = "uniform"
    delta: float | None = None
    delta_candidates: Sequence[float] | None = None


def fit_field(data: Dataset, epsilon: float, settings: PipelineSettings) -> ParameterField:
    """Estimate anchors at ``epsilon`` and attach a smoothing bandwidth."""
    pf = estimate_anchors(
        data,
        epsilon,
        settings.family,
        anchor_dims=settings.anchor_dims,
        n_directions=settings.n_directions,
        n_bins=settings.n_bins,
        radius_policy=settings.radius_policy,
    )
    if settings.delta is not None:
        return pf.with_delta(settings.delta)
    cands = settings.delta_candidates or default_delta_candidates(pf.anchors)
    if pf.m < 3:
        return pf.with_delta(float(np.max(cands)))
    return pf.with_delta(select_delta(pf.anchors, pf.raw_sigma, cands))


def default_delta_candidates(anchors, n: int = 12) -> list[float]:
    """Geometric grid from the typical anchor spacing to half the anchor span."""
    anchors = as_points(anchors)
    if len(anchors) < 2:
        return [1.0]
    span = float(np.hypot(*(anchors.max(axis=0) - anchors.min(axis=0))))
    spacing = span / max(math.sqrt(len(anchors)) - 1, 1)
    return list(np.geomspace(spacing, 0.5 * span, n))


def epsilon_cv_scores(data: Dataset, candidates: Sequence[float], settings: PipelineSettings) -> np.ndarray:
    """Leave-one-out kriging MSE for each bandwidth candidate (NaN where the pipeline fails).

    Anchor fits and smoothing are computed once per candidate from all the
    data; the held-out prediction removes the observation from the kriging
    system only.
    """
    if data.n < 10:
        raise ValueError("leave-one-out bandwidth selection needs at least 10 observations")
    scores = np.full(len(candidates), np.nan)
    for c, eps in enumerate(candidates):
        try:
            model = fit_field(data, float(eps), settings).to_model()
            v = model.at(data.locations)
            r = _pair_correlation(model.family, v, v, outer=True)
            r = 0.5 * (r + r.T)
            np.fill_diagonal(r, 1.0)
            cov = v.sigma[:, None] * r * v.sigma[None, :]
            err, _ = loo_residuals(cov, data.values - v.mean)
            scores[c] = float(np.mean(err**2))
        except (EstimationFailure, KrigingError, ValueError) as exc:
            warnings.warn(f"epsilon={eps:g} excluded: {exc}", stacklevel=2)
    return scores


def select_epsilon(data: Dataset, candidates: Sequence[float], settings: PipelineSettings) -> float:
    """Bandwidth minimizing the leave-one-out kriging MSE."""
    candidates = list(candidates)
    if len(candidates) == 1:
        return float(candidates[0])
    scores = epsilon_cv_scores(data, candidates, settings)
    if np.all(np.isnan(scores)):
        raise EstimationFailure("the pipeline failed for every epsilon candidate")
    return float(candidates[int(np.nanargmin(scores))])


# --------------------------------------------------------------------------
# stationary baseline
# --------------------------------------------------------------------------
def fit_baseline(data: Dataset, max_dist: float | None = None, n_bins: int = 15) -> StationaryBaseline:
    """Nugget + exponential + spherical model fitted to the Matheron variogram.

    Weighted least squares with the same pair-mass / lag-length weights as
    the local fits; the mean is the sample mean.
    """
    if max_dist is None:
        max_dist = 0.5 * data.diameter()
    lags = LagSystem.isotropic(max_dist, n_bins)
    vario = matheron_variogram(data, lags)
    ok = ~vario.empty
    d = np.hypot(*vario.mean_lags[ok].T)
    g = vario.gamma_hat[ok]
    w = np.sqrt(vario.pair_counts[ok] / d)
    var = float(np.var(data.values)) or 1.0

    def model(p, dist):
        c0, c1, a1, c2, a2 = p
        sph = np.where(dist < a2, 1.5 * dist / a2 - 0.5 * (dist / a2) ** 3, 1.0)
        return c0 + c1 * (1 - np.exp(-dist / a1)) + c2 * sph

    # ranges past the fitted lags trade off against sills; keep both identifiable
    lo = [0.0, 0.0, 1e-3 * max_dist, 0.0, 1e-3 * max_dist]
    hi = [2 * var, 2 * var, max_dist, 2 * var, 2 * max_dist]
    best = None
    for a1, a2, split in [(0.1, 0.5, 0.5), (0.3, 1.0, 0.5), (0.05, 0.3, 0.8), (0.2, 0.8, 0.2)]:
        x0 = [0.1 * var, split * var, a1 * max_dist, (1 - split) * var, min(a2, 1.9) * max_dist]
        res = optimize.least_squares(lambda p: w * (model(p, d) - g), x0, bounds=(lo, hi))
        if best is None or res.cost < best.cost:
            best = res
    c0, c1, a1, c2, a2 = best.x
    return StationaryBaseline(
        structures=(Nugget(c0), ExponentialStructure(c1, a1), SphericalStructure(c2, a2)),
        mean=float(np.mean(data.values)),
    )
