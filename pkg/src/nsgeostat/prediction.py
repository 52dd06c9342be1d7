"""Simple kriging with a known, spatially varying mean.

Both the non-stationary model and the stationary nested baseline go through
the same solver: the data covariance matrix is Cholesky-factorized once and
shared by every target in a batch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from .covariance import (
    NsModel,
    StationaryBaseline,
    _pair_correlation,
    as_points,
    has_duplicates,
)
from .variogram import Dataset

JITTER = 1e-10
NEGATIVE_VARIANCE_TOL = 1e-10
_CHUNK = 4096


class KrigingError(RuntimeError):
    """The kriging system could not be solved."""


@dataclass
class KrigingResult:
    targets: np.ndarray
    predictions: np.ndarray
    sd: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return self.sd**2


@dataclass(frozen=True)
class KNearest:
    """Moving neighbourhood of the ``k`` nearest observations."""

    k: int = 64


def choose_neighborhood(n: int, policy="auto"):
    """Global kriging up to 2000 observations, 64-nearest moving neighbourhoods beyond."""
    if policy == "auto":
        return KNearest(64) if n > 2000 else "global"
    if policy in ("global", None):
        return "global"
    if isinstance(policy, KNearest):
        return policy
    if isinstance(policy, int):
        return KNearest(policy)
    raise ValueError(f"unknown neighbourhood policy {policy!r}")


def factorize(cov: np.ndarray, force_jitter: bool = False):
    """Cholesky factor with the jitter-once policy for singular systems."""
    cov = np.array(cov, dtype=float)
    sill = float(np.max(np.diag(cov))) if cov.size else 1.0
    if force_jitter:
        cov[np.diag_indices_from(cov)] += JITTER * sill
    try:
        return linalg.cho_factor(cov, lower=True, check_finite=False), cov
    except linalg.LinAlgError:
        if force_jitter:
            raise KrigingError("covariance matrix is singular even after jitter") from None
    cov[np.diag_indices_from(cov)] += JITTER * sill
    try:
        return linalg.cho_factor(cov, lower=True, check_finite=False), cov
    except linalg.LinAlgError:
        raise KrigingError("covariance matrix is singular even after jitter") from None


def _solve(factor, cov, rhs):
    x = linalg.cho_solve(factor, rhs, check_finite=False)
    # one step of iterative refinement; cheap and helps ill-conditioned smooth models
    r = rhs - cov @ x
    return x + linalg.cho_solve(factor, r, check_finite=False)


def _finish(targets, mean0, var0, c0, eta, resid):
    pred = mean0 + eta.T @ resid
    q = var0 - np.einsum("ij,ij->j", c0, eta)
    scale = np.maximum(var0, 1e-300)
    if np.any(q < -NEGATIVE_VARIANCE_TOL * np.maximum(scale, 1.0)):
        raise KrigingError("negative kriging variance: covariance is not positive definite")
    q = np.clip(q, 0.0, var0)
    return pred, np.sqrt(q)


def krige(data: Dataset, targets, model: NsModel, neighborhood="global") -> KrigingResult:
    """Simple kriging predictor and standard deviation at ``targets``."""
    targets = as_points(targets)
    if data.n == 0:
        vt = model.at(targets)
        return KrigingResult(targets, vt.mean.copy(), vt.sigma.copy())
    policy = choose_neighborhood(data.n, neighborhood)
    vd = model.at(data.locations)
    resid = data.values - vd.mean
    fam = model.family

    if policy == "global":
        r = _pair_correlation(fam, vd, vd, outer=True)
        r = 0.5 * (r + r.T)
        np.fill_diagonal(r, 1.0)
        cov = vd.sigma[:, None] * r * vd.sigma[None, :]
        factor, cov = factorize(cov, force_jitter=has_duplicates(data.locations))
        preds = np.empty(len(targets))
        sds = np.empty(len(targets))
        for s in range(0, len(targets), _CHUNK):
            vt = model.at(targets[s : s + _CHUNK])
            c0 = vd.sigma[:, None] * _pair_correlation(fam, vd, vt, outer=True) * vt.sigma[None, :]
            eta = _solve(factor, cov, c0)
            preds[s : s + _CHUNK], sds[s : s + _CHUNK] = _finish(
                vt.points, vt.mean, vt.sigma**2, c0, eta, resid
            )
        return KrigingResult(targets, preds, sds)

    tree = cKDTree(data.locations)
    k = min(policy.k, data.n)
    _, idx = tree.query(targets, k=k)
    idx = np.asarray(idx).reshape(len(targets), k)
    preds = np.empty(len(targets))
    sds = np.empty(len(targets))
    for t in range(len(targets)):
        res = krige(data.subset(np.sort(idx[t])), targets[t : t + 1], model, neighborhood="global")
        preds[t], sds[t] = res.predictions[0], res.sd[0]
    return KrigingResult(targets, preds, sds)


def baseline_covariance(model: StationaryBaseline, x, y=None) -> np.ndarray:
    x = as_points(x)
    y = x if y is None else as_points(y)
    h = x[:, None, :] - y[None, :, :]
    return model.cov(h)


def krige_baseline(data: Dataset, targets, model: StationaryBaseline, neighborhood="global") -> KrigingResult:
    """Simple kriging under the stationary nested model with its constant mean."""
    targets = as_points(targets)
    sill = model.total_sill
    if data.n == 0:
        return KrigingResult(targets, np.full(len(targets), model.mean), np.full(len(targets), np.sqrt(sill)))
    policy = choose_neighborhood(data.n, neighborhood)
    if policy != "global":
        tree = cKDTree(data.locations)
        k = min(policy.k, data.n)
        _, idx = tree.query(targets, k=k)
        idx = np.asarray(idx).reshape(len(targets), k)
        preds = np.empty(len(targets))
        sds = np.empty(len(targets))
        for t in range(len(targets)):
            res = krige_baseline(data.subset(np.sort(idx[t])), targets[t : t + 1], model)
            preds[t], sds[t] = res.predictions[0], res.sd[0]
        return KrigingResult(targets, preds, sds)

    cov = baseline_covariance(model, data.locations)
    cov = 0.5 * (cov + cov.T)
    factor, cov = factorize(cov, force_jitter=has_duplicates(data.locations))
    resid = data.values - model.mean
    preds = np.empty(len(targets))
    sds = np.empty(len(targets))
    for s in range(0, len(targets), _CHUNK):
        tt = targets[s : s + _CHUNK]
        c0 = baseline_covariance(model, data.locations, tt)
        eta = _solve(factor, cov, c0)
        preds[s : s + _CHUNK], sds[s : s + _CHUNK] = _finish(
            tt, np.full(len(tt), model.mean), np.full(len(tt), sill), c0, eta, resid
        )
    return KrigingResult(targets, preds, sds)


def loo_residuals(cov: np.ndarray, resid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out simple kriging errors and variances from one factorization.

    With ``B = C^-1``: ``Y_i - Yhat_{-i} = (B r)_i / B_ii`` and the
    leave-one-out kriging variance is ``1 / B_ii``.
    """
    factor, cov = factorize(cov)
    b = linalg.cho_solve(factor, np.eye(len(cov)), check_finite=False)
    diag = np.diag(b)
    if np.any(diag <= 0):
        warnings.warn("non-positive diagonal in inverse covariance", stacklevel=2)
    err = (b @ resid) / diag
    return err, 1.0 / diag
