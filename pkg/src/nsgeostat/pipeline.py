"""Stage functions behind the command-line tool.

Each stage reads the artifacts of earlier stages from ``output_dir`` and
writes its own, so stages can be rerun independently.  ``run_pipeline``
chains them: estimate -> smooth -> krige -> simulate -> validate.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io
from .covariance import as_points, cross_covariance
from .estimation import (
    ParameterField,
    PipelineSettings,
    default_delta_candidates,
    delta_cv_scores,
    epsilon_cv_scores,
    estimate_anchors,
    fit_baseline,
)
from .grid import Grid
from .metrics import score
from .prediction import krige, krige_baseline
from .simulation import BURN_IN_SWEEPS, conditional_simulate

log = logging.getLogger(__name__)

SUBSTREAMS = {"simulation": 1, "multistart": 2}

ANCHORS = "anchors.csv"
EPSILON_CV = "epsilon_cv.csv"
DELTA_CV = "delta_cv.csv"
SCORES = "scores.csv"
CONTOURS = "contours.csv"
SIM_CHECK = "simulation_check.csv"
PARAM_MAPS = ("mean", "variance", "sigma", "lambda1", "lambda2", "ratio", "azimuth")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def substream_seed(seed: int, name: str) -> int:
    """Independent 63-bit seed for the named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(SUBSTREAMS[name],))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _out(cfg: io.RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _settings(cfg: io.RunConfig, delta=None) -> PipelineSettings:
    return PipelineSettings(
        family=cfg.make_family(),
        anchor_dims=tuple(cfg.anchor_dims),
        n_directions=cfg.n_directions,
        n_bins=cfg.n_bins,
        radius_policy=cfg.radius_policy,
        delta=delta,
        delta_candidates=cfg.delta or None,
    )


def data_grid(data, cfg: io.RunConfig) -> Grid:
    lo, hi = data.locations.min(axis=0), data.locations.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return Grid.covering(lo, lo + span, cfg.grid_dims)


def load(cfg: io.RunConfig):
    if not cfg.input:
        raise StageError("load", "no input file configured")
    try:
        return io.load_dataset(cfg.input, cfg)
    except (OSError, ValueError) as exc:
        raise StageError("load", str(exc)) from exc


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------
def stage_cv_epsilon(cfg: io.RunConfig, data=None) -> float:
    data = data if data is not None else load(cfg)
    try:
        if len(cfg.epsilon) == 1:
            best = cfg.epsilon[0]
            scores = np.array([np.nan])
        else:
            scores = epsilon_cv_scores(data, cfg.epsilon, _settings(cfg))
            if np.all(np.isnan(scores)):
                raise ValueError("pipeline failed for every epsilon candidate")
            best = cfg.epsilon[int(np.nanargmin(scores))]
    except Exception as exc:
        raise StageError("cv-epsilon", str(exc)) from exc
    io.write_table(
        _out(cfg) / EPSILON_CV,
        [{"epsilon": e, "loo_mse": float(s), "selected": int(e == best)} for e, s in zip(cfg.epsilon, scores)],
    )
    return float(best)


def stage_estimate(cfg: io.RunConfig, data=None, epsilon: float | None = None) -> ParameterField:
    data = data if data is not None else load(cfg)
    if epsilon is None:
        epsilon = _selected(cfg, EPSILON_CV, "epsilon", default=cfg.epsilon[0])
    s = _settings(cfg)
    try:
        pf = estimate_anchors(
            data,
            epsilon,
            s.family,
            anchor_dims=s.anchor_dims,
            n_directions=s.n_directions,
            n_bins=s.n_bins,
            radius_policy=s.radius_policy,
        )
    except Exception as exc:
        raise StageError("estimate", str(exc)) from exc
    io.write_anchors(_out(cfg) / ANCHORS, pf)
    return pf


def stage_cv_delta(cfg: io.RunConfig, pf: ParameterField | None = None) -> float:
    pf = pf if pf is not None else _anchors(cfg)
    cands = cfg.delta or default_delta_candidates(pf.anchors)
    try:
        if len(cands) == 1:
            best, scores = cands[0], np.array([np.nan])
        else:
            scores = delta_cv_scores(pf.anchors, pf.raw_sigma, cands)
            if np.all(np.isnan(scores)):
                raise ValueError("criterion undefined for every candidate")
            best = cands[int(np.nanargmin(scores))]
    except Exception as exc:
        raise StageError("cv-delta", str(exc)) from exc
    io.write_table(
        _out(cfg) / DELTA_CV,
        [{"delta": float(d), "loo_criterion": float(s), "selected": int(d == best)} for d, s in zip(cands, scores)],
    )
    pf = pf.with_delta(best)
    io.write_anchors(_out(cfg) / ANCHORS, pf)
    return float(best)


def stage_smooth(cfg: io.RunConfig, pf: ParameterField | None = None, grid: Grid | None = None) -> dict:
    pf = pf if pf is not None else _anchors(cfg, need_delta=True)
    if grid is None:
        grid = data_grid(load(cfg), cfg)
    try:
        e = pf.evaluate(grid.points())
    except Exception as exc:
        raise StageError("smooth", str(exc)) from exc
    maps = {
        "mean": e["mean"],
        "variance": e["sigma"] ** 2,
        "sigma": e["sigma"],
        "lambda1": e["lambda1"],
        "lambda2": e["lambda2"],
        "ratio": e["lambda1"] / e["lambda2"],
        "azimuth": e["psi"],
    }
    out = _out(cfg)
    for name in PARAM_MAPS:
        io.write_grid(out / f"param_{name}.grid", grid, maps[name], name)
    return maps


def stage_krige(cfg: io.RunConfig, data=None, pf: ParameterField | None = None, grid: Grid | None = None):
    data = data if data is not None else load(cfg)
    pf = pf if pf is not None else _anchors(cfg, need_delta=True)
    grid = grid or data_grid(data, cfg)
    try:
        res = krige(data, grid.points(), pf.to_model(), neighborhood=_neighborhood(cfg))
    except Exception as exc:
        raise StageError("krige", str(exc)) from exc
    out = _out(cfg)
    io.write_grid(out / "prediction.grid", grid, res.predictions, "prediction")
    io.write_grid(out / "sd.grid", grid, res.sd, "sd")
    return res


def stage_simulate(cfg: io.RunConfig, data=None, pf: ParameterField | None = None, grid: Grid | None = None):
    data = data if data is not None else load(cfg)
    pf = pf if pf is not None else _anchors(cfg, need_delta=True)
    grid = grid or data_grid(data, cfg)
    n = cfg.n_realizations
    if n <= 0:
        return None
    model = pf.to_model()
    sites = np.vstack([grid.points(), data.locations])
    try:
        sims = conditional_simulate(
            data, sites, model, n, seed=substream_seed(cfg.seed, "simulation"), n_sweeps=cfg.n_sweeps or BURN_IN_SWEEPS
        )
    except Exception as exc:
        raise StageError("simulate", str(exc)) from exc
    out = _out(cfg)
    ng = grid.size
    rows = []
    for r in range(n):
        io.write_grid(out / f"realization_{r:03d}.grid", grid, sims[r, :ng], f"realization_{r}")
        rows.append({"realization": r, "max_abs_data_misfit": float(np.max(np.abs(sims[r, ng:] - data.values)))})
    io.write_table(out / SIM_CHECK, rows)
    return sims[:, :ng]


def stage_validate(cfg: io.RunConfig, data=None, pf: ParameterField | None = None) -> dict:
    if not cfg.validation:
        raise StageError("validate", "no validation file configured")
    data = data if data is not None else load(cfg)
    pf = pf if pf is not None else _anchors(cfg, need_delta=True)
    try:
        held = io.load_dataset(cfg.validation, cfg)
        ns = krige(data, held.locations, pf.to_model(), neighborhood=_neighborhood(cfg))
        base = krige_baseline(data, held.locations, fit_baseline(data), neighborhood=_neighborhood(cfg))
    except Exception as exc:
        raise StageError("validate", str(exc)) from exc
    reports = {
        "non_stationary": score(held.values, ns.predictions, ns.sd),
        "stationary": score(held.values, base.predictions, base.sd),
    }
    io.write_table(_out(cfg) / SCORES, [{"model": k, **v.as_dict()} for k, v in reports.items()])
    return reports


def covariance_contours(model, x0, levels, half_width=None, n=101):
    """Level sets of ``C(x0, .) / C(x0, x0)`` as polylines on a local grid.

    Returns a list of ``(level, polyline)`` with polylines of shape ``(k, 2)``.
    """
    from skimage.measure import find_contours

    x0 = np.asarray(x0, dtype=float)
    v0 = model.at(x0)
    if half_width is None:
        from .anisotropy import matrix_to_params

        half_width = 4.0 * matrix_to_params(v0.matrices[0]).lambda1
    xs = np.linspace(x0[0] - half_width, x0[0] + half_width, n)
    ys = np.linspace(x0[1] - half_width, x0[1] + half_width, n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    c = cross_covariance(as_points(x0), pts, model, vx=v0)[0].reshape(n, n)
    c0 = v0.sigma[0] ** 2
    if c0 <= 0:
        return []
    rel = c / c0
    dx, dy = xs[1] - xs[0], ys[1] - ys[0]
    out = []
    for level in levels:
        for path in find_contours(rel, level):
            # find_contours returns (row, col) = (y index, x index)
            out.append((float(level), np.column_stack([xs[0] + path[:, 1] * dx, ys[0] + path[:, 0] * dy])))
    return out


def stage_contours(cfg: io.RunConfig, pf: ParameterField | None = None):
    pf = pf if pf is not None else _anchors(cfg, need_delta=True)
    points = as_points(cfg.contour_points) if len(cfg.contour_points) else pf.anchors
    model = pf.to_model()
    rows = []
    try:
        for i, x0 in enumerate(points):
            for j, (level, line) in enumerate(covariance_contours(model, x0, cfg.contour_levels)):
                for k, (x, y) in enumerate(line):
                    rows.append({"point": i, "x0": float(x0[0]), "y0": float(x0[1]), "level": level,
                                 "path": j, "vertex": k, "x": float(x), "y": float(y)})
    except Exception as exc:
        raise StageError("covariance-contours", str(exc)) from exc
    if not rows:
        raise StageError("covariance-contours", "no contour found at the requested levels")
    io.write_table(_out(cfg) / CONTOURS, rows)
    return rows


def run_pipeline(cfg: io.RunConfig) -> dict:
    """Full run: every artifact of every stage, reproducible from ``cfg``."""
    out = _out(cfg)
    cfg.dump(out / "config.yaml")
    data = load(cfg)
    eps = stage_cv_epsilon(cfg, data)
    pf = stage_estimate(cfg, data, eps)
    delta = stage_cv_delta(cfg, pf)
    pf = pf.with_delta(delta)
    grid = data_grid(data, cfg)
    stage_smooth(cfg, pf, grid)
    stage_krige(cfg, data, pf, grid)
    stage_simulate(cfg, data, pf, grid)
    result = {"epsilon": eps, "delta": delta, "n_anchors": pf.m}
    if cfg.validation:
        result["scores"] = stage_validate(cfg, data, pf)
    return result


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------
def _neighborhood(cfg: io.RunConfig):
    nb = cfg.neighborhood
    if isinstance(nb, str) and nb.isdigit():
        return int(nb)
    return nb


def _anchors(cfg: io.RunConfig, need_delta: bool = False) -> ParameterField:
    path = Path(cfg.output_dir) / ANCHORS
    if not path.exists():
        raise StageError("load", f"{path} not found; run 'estimate' first")
    pf = io.read_anchors(path)
    if need_delta and pf.delta is None:
        if len(cfg.delta) == 1:
            return pf.with_delta(cfg.delta[0])
        raise StageError("load", "anchors carry no smoothing bandwidth; run 'cv-delta' first")
    return pf


def _selected(cfg: io.RunConfig, table: str, key: str, default: float) -> float:
    path = Path(cfg.output_dir) / table
    if not path.exists():
        return float(default)
    for row in io.read_table(path):
        if int(row["selected"]):
            return float(row[key])
    return float(default)
