"""Validation scores for probabilistic predictions with Gaussian predictive laws."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ScoreReport:
    """MAE, RMSE, NMSE, LogS (summed and per point) and mean CRPS over ``n`` points."""

    mae: float
    rmse: float
    nmse: float
    logs: float
    logs_mean: float
    crps: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def crps_gaussian(observed, mu, sd) -> np.ndarray:
    """Closed-form CRPS of N(mu, sd^2) at ``observed``; absolute error when ``sd = 0``."""
    observed, mu, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (observed, mu, sd)))
    shape = observed.shape
    e = np.atleast_1d(observed - mu)
    sd = np.atleast_1d(sd)
    out = np.abs(e)
    pos = sd > 0
    z = e[pos] / sd[pos]
    out[pos] = sd[pos] * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / math.sqrt(math.pi))
    return out.reshape(shape)[()]


def log_score(observed, mu, sd) -> np.ndarray:
    """Gaussian negative log density per point; ``inf`` for a zero sd with nonzero error."""
    observed, mu, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (observed, mu, sd)))
    e = observed - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _HALF_LOG_2PI + np.log(sd) + e**2 / (2 * sd**2)
    out = np.where((sd == 0) & (e != 0), np.inf, out)
    return np.where((sd == 0) & (e == 0), -np.inf, out)


def score(observed, predicted, pred_sd) -> ScoreReport:
    observed = np.asarray(observed, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    sd = np.broadcast_to(np.asarray(pred_sd, dtype=float), observed.shape).ravel()
    if observed.shape != predicted.shape:
        raise ValueError("observed and predicted must have equal lengths")
    if observed.size == 0:
        raise ValueError("cannot score an empty set")
    if np.any(sd < 0):
        raise ValueError("predictive standard deviations must be non-negative")
    e = observed - predicted
    with np.errstate(divide="ignore", invalid="ignore"):
        std2 = np.where(sd > 0, e**2 / sd**2, np.where(e == 0, 0.0, np.inf))
    ls = log_score(observed, predicted, sd)
    return ScoreReport(
        mae=float(np.mean(np.abs(e))),
        rmse=float(np.sqrt(np.mean(e**2))),
        nmse=float(np.mean(std2)),
        logs=float(np.sum(ls)),
        logs_mean=float(np.mean(ls)),
        crps=float(np.mean(crps_gaussian(observed, predicted, sd))),
        n=int(observed.size),
    )
