"""Kernel-weighted local variogram estimation.

At an anchor ``x0`` each data point gets the standardized weight
``K*(x0, s_i) = K(x0, s_i) / sum_l K(x0, s_l)`` and each unordered pair in
a lag bin contributes with weight ``K*_i K*_j``::

    gamma(h; x0) = sum K*_i K*_j (Y_i - Y_j)^2 / (2 sum K*_i K*_j)

A constant kernel gives the Matheron estimator; an indicator kernel of
radius ``epsilon`` gives the moving-window estimator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

EMPTY_BIN_MASS = 1e-12
DUPLICATE_TOL = 1e-9


class EstimationFailure(RuntimeError):
    """Local estimation is impossible at an anchor (e.g. every lag bin is empty)."""


@dataclass
class Dataset:
    """Scattered observations ``values[i]`` at ``locations[i]``."""

    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.locations) != len(self.values):
            raise ValueError("locations and values must have equal lengths")
        if len(self.locations) > 1:
            close = cKDTree(self.locations).query_pairs(DUPLICATE_TOL, output_type="ndarray")
            if len(close) and np.any(self.values[close[:, 0]] != self.values[close[:, 1]]):
                raise ValueError("duplicated locations carry different values")

    @property
    def n(self) -> int:
        return len(self.values)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.locations[idx], self.values[idx])

    def without(self, i: int) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(keep)

    def diameter(self) -> float:
        lo, hi = self.locations.min(axis=0), self.locations.max(axis=0)
        return float(np.hypot(*(hi - lo)))


@dataclass(frozen=True)
class Lag:
    h: tuple[float, float]
    dist_tol: float
    angle_tol: float = math.pi / 2

    @property
    def length(self) -> float:
        return math.hypot(*self.h)

    @property
    def azimuth(self) -> float:
        return math.atan2(self.h[1], self.h[0]) % math.pi


@dataclass(frozen=True)
class LagSystem:
    """Nominal lag vectors with distance and angular tolerances.

    A pair separated by ``d`` belongs to bin ``j`` when ``|d|`` lies in
    ``(|h_j| - dist_tol, |h_j| + dist_tol]`` and the undirected angle between
    ``d`` and ``h_j`` is at most ``angle_tol``.
    """

    lags: tuple[Lag, ...]

    def __post_init__(self):
        if not self.lags:
            raise ValueError("a lag system needs at least one lag")
        for lag in self.lags:
            if not lag.dist_tol > 0:
                raise ValueError("distance tolerance must be positive")
            if not lag.length > 0:
                raise ValueError("lag vectors must be non-zero")

    @property
    def J(self) -> int:
        return len(self.lags)

    @property
    def max_distance(self) -> float:
        return max(lag.length + lag.dist_tol for lag in self.lags)

    def vectors(self) -> np.ndarray:
        return np.array([lag.h for lag in self.lags], dtype=float)

    @classmethod
    def isotropic(cls, max_dist: float, n_bins: int = 10) -> "LagSystem":
        width = max_dist / n_bins
        return cls(tuple(Lag(((j + 0.5) * width, 0.0), width / 2, math.pi / 2) for j in range(n_bins)))

    @classmethod
    def directional(
        cls, max_dist: float, n_bins: int = 10, n_directions: int = 4, angle_tol: float | None = None
    ) -> "LagSystem":
        width = max_dist / n_bins
        if angle_tol is None:
            angle_tol = math.pi / (2 * n_directions)
        lags = []
        for k in range(n_directions):
            az = k * math.pi / n_directions
            c, s = math.cos(az), math.sin(az)
            for j in range(n_bins):
                r = (j + 0.5) * width
                lags.append(Lag((r * c, r * s), width / 2, angle_tol))
        return cls(tuple(lags))


def neighborhood_radius(epsilon: float, policy: str = "uniform") -> float:
    """Radius of the quasi-stationarity neighbourhood for a Gaussian bandwidth.

    ``uniform`` matches the standard deviation of a uniform disc kernel
    (sqrt(3) eps), ``quantile`` uses 2 eps and ``fwhm`` the full width at
    half maximum sqrt(2 ln 2) eps.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    factors = {"uniform": math.sqrt(3.0), "quantile": 2.0, "fwhm": math.sqrt(2.0 * math.log(2.0))}
    try:
        return factors[policy] * epsilon
    except KeyError:
        raise ValueError(f"unknown radius policy {policy!r}") from None


class PairTable:
    """Precomputed pair/bin memberships for a dataset and lag system.

    Reused across anchors: only the kernel weights depend on ``x0``.
    """

    def __init__(self, data: Dataset, lags: LagSystem):
        self.data = data
        self.lags = lags
        locs = data.locations
        if data.n < 2:
            pairs = np.empty((0, 2), dtype=int)
        else:
            pairs = cKDTree(locs).query_pairs(lags.max_distance, output_type="ndarray")
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if len(pairs) else pairs.reshape(0, 2)
        d = locs[pairs[:, 1]] - locs[pairs[:, 0]] if len(pairs) else np.empty((0, 2))
        dist = np.hypot(d[:, 0], d[:, 1])
        ang = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)

        pair_idx, bin_idx, oriented = [], [], []
        for j, lag in enumerate(lags.lags):
            in_dist = (dist > lag.length - lag.dist_tol) & (dist <= lag.length + lag.dist_tol)
            diff = np.abs(ang - lag.azimuth)
            diff = np.minimum(diff, np.pi - diff)
            member = np.nonzero(in_dist & (diff <= lag.angle_tol + 1e-12))[0]
            pair_idx.append(member)
            bin_idx.append(np.full(len(member), j))
            # orient each separation to the half-plane of the nominal lag
            hj = np.asarray(lag.h)
            dm = d[member]
            sign = np.where(dm @ hj >= 0.0, 1.0, -1.0)
            oriented.append(dm * sign[:, None])
        self.pairs = pairs
        self.member_pair = np.concatenate(pair_idx).astype(int) if pair_idx else np.empty(0, int)
        self.member_bin = np.concatenate(bin_idx).astype(int) if bin_idx else np.empty(0, int)
        self.member_sep = np.vstack(oriented) if oriented else np.empty((0, 2))
        vals = data.values
        self.sqdiff = (vals[pairs[:, 0]] - vals[pairs[:, 1]]) ** 2 if len(pairs) else np.empty(0)

    def bin_sums(self, kstar: np.ndarray):
        """Return per-bin (sum w sq, sum w, weighted-mean lag vectors, pair counts)."""
        J = self.lags.J
        i, j = self.pairs[self.member_pair, 0], self.pairs[self.member_pair, 1]
        w = kstar[i] * kstar[j]
        num = np.bincount(self.member_bin, weights=w * self.sqdiff[self.member_pair], minlength=J)
        den = np.bincount(self.member_bin, weights=w, minlength=J)
        counts = np.bincount(self.member_bin, minlength=J)
        mx = np.bincount(self.member_bin, weights=w * self.member_sep[:, 0], minlength=J)
        my = np.bincount(self.member_bin, weights=w * self.member_sep[:, 1], minlength=J)
        return num, den, np.column_stack([mx, my]), counts


def empty_bins(mass: np.ndarray) -> np.ndarray:
    """Bins whose kernel mass is zero or negligible next to the heaviest bin."""
    mass = np.asarray(mass, dtype=float)
    top = mass.max() if mass.size else 0.0
    return (mass <= 0.0) | (mass < EMPTY_BIN_MASS * top)


@dataclass
class LocalVariogram:
    """Local empirical variogram at one anchor.

    ``gamma_hat`` is NaN in empty bins (``empty`` flags them);
    ``mean_lags`` holds the kernel-weighted average separation vector in
    each bin (the nominal lag where the bin is empty).
    """

    x0: np.ndarray
    lags: LagSystem
    gamma_hat: np.ndarray
    weights: np.ndarray
    pair_counts: np.ndarray
    kernel_mass: np.ndarray
    mean_lags: np.ndarray = field(default=None)

    @property
    def empty(self) -> np.ndarray:
        return empty_bins(self.kernel_mass)

    @property
    def n_nonempty(self) -> int:
        return int(np.count_nonzero(~self.empty))


def kernel_weights(locations: np.ndarray, x0, epsilon: float, kernel: str = "gaussian") -> np.ndarray:
    """Raw (unstandardized) kernel values K(x0, s_i)."""
    d2 = np.sum((np.asarray(locations, float) - np.asarray(x0, float)) ** 2, axis=1)
    if kernel == "gaussian":
        return np.exp(-0.5 * d2 / epsilon**2)
    if kernel == "constant":
        return np.ones(len(d2))
    if kernel == "window":
        return (d2 < epsilon**2).astype(float)
    raise ValueError(f"unknown kernel {kernel!r}")


def standardized_weights(locations: np.ndarray, x0, epsilon: float, kernel: str = "gaussian") -> np.ndarray:
    """K*(x0, s_i) = K(x0, s_i) / sum_l K(x0, s_l).

    The Gaussian kernel is rescaled by its largest value before
    normalizing, so anchors far from every observation do not underflow.
    """
    x0 = np.asarray(x0, dtype=float)
    if kernel == "gaussian":
        d2 = np.sum((np.asarray(locations, float) - x0) ** 2, axis=1)
        k = np.exp(-0.5 * (d2 - d2.min()) / epsilon**2)
    else:
        k = kernel_weights(locations, x0, epsilon, kernel)
    total = k.sum()
    if not total > 0:
        raise EstimationFailure(f"no kernel mass at {x0}")
    return k / total


def local_variogram(
    data: Dataset,
    x0,
    epsilon: float,
    lags: LagSystem,
    kernel: str = "gaussian",
    pairs: PairTable | None = None,
) -> LocalVariogram:
    """Kernel estimator of the local variogram at ``x0``."""
    if data.n == 0:
        raise ValueError("empty dataset")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if pairs is None:
        pairs = PairTable(data, lags)
    x0 = np.asarray(x0, dtype=float)
    kstar = standardized_weights(data.locations, x0, epsilon, kernel)
    num, den, msum, counts = pairs.bin_sums(kstar)
    empty = empty_bins(den)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(empty, np.nan, num / (2.0 * den))
        mean_lags = np.where(empty[:, None], lags.vectors(), msum / den[:, None])
    lengths = np.array([lag.length for lag in lags.lags])
    weights = np.where(empty, 0.0, np.sqrt(den / lengths))
    if np.all(empty):
        raise EstimationFailure(f"every lag bin is empty at {x0}")
    return LocalVariogram(
        x0=x0,
        lags=lags,
        gamma_hat=gamma,
        weights=weights,
        pair_counts=counts,
        kernel_mass=den,
        mean_lags=mean_lags,
    )


def matheron_variogram(data: Dataset, lags: LagSystem, pairs: PairTable | None = None) -> LocalVariogram:
    """Classical Matheron estimator: the constant-kernel special case."""
    centre = data.locations.mean(axis=0) if data.n else np.zeros(2)
    return local_variogram(data, centre, 1.0, lags, kernel="constant", pairs=pairs)
