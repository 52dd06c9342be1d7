"""Gaussian simulation of the non-stationary model.

Unconditional realizations come from the propagative Gibbs sampler, which
needs correlation rows only and never factorizes the covariance matrix.
A pivot ``a`` gets a fresh N(0, 1) value and the change propagates to
every other site through ``C_ab``; this is an exact Gibbs step on
``X = C^-1 Z``.  Conditioning adds the simple-kriging interpolant of the
data-minus-simulation residual.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .covariance import NsModel, _pair_correlation, as_points, covariance_matrix
from .prediction import factorize
from .variogram import Dataset

BURN_IN_SWEEPS = 100
_DRAW_CHUNK = 4096
ROW_CACHE_VALUES = 2**25
_UNIT_DIAG_TOL = 1e-10


class DenseRows:
    """Row accessor over an explicit correlation matrix."""

    def __init__(self, corr):
        corr = np.asarray(corr, dtype=float)
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
            raise ValueError("correlation matrix must be square")
        if np.any(np.abs(np.diag(corr) - 1.0) > _UNIT_DIAG_TOL):
            raise ValueError("correlation matrix must have a unit diagonal")
        self.corr = corr

    @property
    def n(self) -> int:
        return len(self.corr)

    def rows(self, idx) -> np.ndarray:
        return self.corr[np.asarray(idx)]


class CorrelationRows:
    """Correlation rows of a model at ``sites``, computed on demand.

    Rows are cached in a bounded LRU store, so memory stays at
    ``max_cached * n`` values rather than ``n * n``.
    """

    def __init__(self, model: NsModel, sites, max_cached: int = 1024):
        self.model = model
        self.values = model.at(as_points(sites))
        self.max_cached = int(max_cached)
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    @property
    def n(self) -> int:
        return len(self.values.points)

    def _row(self, a: int) -> np.ndarray:
        row = self._cache.get(a)
        if row is not None:
            self._cache.move_to_end(a)
            return row
        v = self.values
        one = type(v)(
            points=v.points[a : a + 1],
            mean=v.mean[a : a + 1],
            sigma=v.sigma[a : a + 1],
            matrices=v.matrices[a : a + 1],
            family_param=None if v.family_param is None else v.family_param[a : a + 1],
        )
        row = _pair_correlation(self.model.family, one, v, outer=True)[0]
        row[a] = 1.0
        self._cache[a] = row
        if len(self._cache) > self.max_cached:
            self._cache.popitem(last=False)
        return row

    def rows(self, idx) -> np.ndarray:
        uniq, inv = np.unique(np.asarray(idx).ravel(), return_inverse=True)
        block = np.vstack([self._row(int(a)) for a in uniq])
        return block[inv]


def _accessor(corr):
    if hasattr(corr, "rows"):
        return corr
    return DenseRows(corr)


@dataclass
class SimulationState:
    """Standardized field state of a batch of independent chains."""

    z: np.ndarray  # (n_chains, n_sites)
    iteration: int
    seed: int


def gibbs_chains(corr, n_chains: int, n_sweeps: int = BURN_IN_SWEEPS, seed: int = 0, init=None) -> np.ndarray:
    """Run ``n_chains`` independent propagative Gibbs chains.

    Each sweep is ``n_sites`` single-pivot updates with the pivot drawn
    uniformly.  Chain ``r`` draws from its own stream
    ``SeedSequence(seed, spawn_key=(r,))``, so a chain's output does not
    depend on how many other chains run beside it.  Returns the final
    states, shape ``(n_chains, n_sites)``.
    """
    acc = _accessor(corr)
    n = acc.n
    if n_sweeps < 0:
        raise ValueError("n_sweeps must be non-negative")
    z = np.zeros((n_chains, n)) if init is None else np.array(init, dtype=float).reshape(n_chains, n)
    if n == 0:
        return z
    gens = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,)))) for r in range(n_chains)]
    total = n_sweeps * n
    chains = np.arange(n_chains)
    done = 0
    while done < total:
        m = min(_DRAW_CHUNK, total - done)
        pivots = np.empty((n_chains, m), dtype=np.intp)
        draws = np.empty((n_chains, m))
        for r, g in enumerate(gens):
            pivots[r] = g.integers(0, n, size=m)
            draws[r] = g.standard_normal(m)
        for t in range(m):
            a = pivots[:, t]
            step = draws[:, t] - z[chains, a]
            z += step[:, None] * acc.rows(a)
        done += m
    return z


def gibbs_propagative(corr, n_sites: int | None = None, n_sweeps: int = BURN_IN_SWEEPS, seed: int = 0) -> np.ndarray:
    """One propagative Gibbs chain; approximately N(0, C) after burn-in."""
    acc = _accessor(corr)
    if n_sites is not None and n_sites != acc.n:
        raise ValueError(f"n_sites={n_sites} does not match the correlation size {acc.n}")
    return gibbs_chains(acc, 1, n_sweeps, seed)[0]


def cholesky_sample(cov, n_samples: int, seed: int = 0) -> np.ndarray:
    """Exact N(0, cov) draws, shape ``(n_samples, n)``; small-n reference sampler."""
    cov = np.asarray(cov, dtype=float)
    if len(cov) > 2000:
        raise ValueError("Cholesky sampling is limited to n <= 2000")
    (low, _), _ = factorize(cov)
    low = np.tril(low)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_samples, len(cov))) @ low.T


def unconditional_simulate(
    model: NsModel,
    sites,
    seed: int = 0,
    n_realizations: int = 1,
    n_sweeps: int = BURN_IN_SWEEPS,
    max_cached: int | None = None,
) -> np.ndarray:
    """Realizations ``m(x) + sigma(x) Z(x)``, shape ``(n_realizations, n_sites)``.

    The row cache defaults to about 256 MB of correlation rows.
    """
    sites = as_points(sites)
    if max_cached is None:
        max_cached = max(1, min(len(sites), ROW_CACHE_VALUES // max(len(sites), 1)))
    acc = CorrelationRows(model, sites, max_cached=max_cached)
    v = acc.values
    if np.all(v.sigma == 0):
        return np.broadcast_to(v.mean, (n_realizations, len(sites))).copy()
    z = gibbs_chains(acc, n_realizations, n_sweeps, seed)
    return v.mean[None, :] + v.sigma[None, :] * z


def condition(sim_sites, sim_data, data: Dataset, sites, model: NsModel) -> np.ndarray:
    """Condition unconditional realizations on the data.

    ``sim_sites`` and ``sim_data`` hold the same realization(s) at the target
    sites and at the data locations.  Returns ``X + K[Y - X]`` at the sites,
    where ``K`` is simple kriging with zero mean.
    """
    sim_sites = np.asarray(sim_sites, dtype=float)
    single = sim_sites.ndim == 1
    xs = np.atleast_2d(sim_sites)
    if data.n == 0:
        return sim_sites.copy()
    xd = np.atleast_2d(np.asarray(sim_data, dtype=float))
    if xd.shape[1] != data.n:
        raise ValueError("sim_data must hold one value per observation")
    sites = as_points(sites)
    vd = model.at(data.locations)
    vs = model.at(sites)
    cov = covariance_matrix(data.locations, model, check_duplicates=False)
    factor, cov = factorize(cov)
    c0 = vd.sigma[:, None] * _pair_correlation(model.family, vd, vs, outer=True) * vs.sigma[None, :]
    eta = linalg.cho_solve(factor, c0, check_finite=False)
    out = xs + (data.values[None, :] - xd) @ eta
    return out[0] if single else out


def conditional_simulate(
    data: Dataset,
    sites,
    model: NsModel,
    n_realizations: int = 1,
    seed: int = 0,
    n_sweeps: int = BURN_IN_SWEEPS,
) -> np.ndarray:
    """Conditional realizations at ``sites``, shape ``(n_realizations, n_sites)``."""
    sites = as_points(sites)
    joint = np.vstack([sites, data.locations])
    x = unconditional_simulate(model, joint, seed, n_realizations, n_sweeps)
    ns = len(sites)
    return condition(x[:, :ns], x[:, ns:], data, sites, model)
