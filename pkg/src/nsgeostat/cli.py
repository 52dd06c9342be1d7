"""Command-line interface.

Every subcommand takes a config file (YAML or JSON) and optional flag
overrides; artifacts go to ``output_dir``.  On failure the exit code names
the stage (see ``EXIT_CODES``) and stderr carries ``[stage] message``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from . import pipeline
from .io import ConfigError, RunConfig

EXIT_CODES = {
    "config": 2,
    "load": 3,
    "estimate": 10,
    "smooth": 11,
    "cv-epsilon": 12,
    "cv-delta": 13,
    "krige": 14,
    "simulate": 15,
    "validate": 16,
    "covariance-contours": 17,
}

COMMANDS = {
    "run": lambda cfg: pipeline.run_pipeline(cfg),
    "estimate": lambda cfg: pipeline.stage_estimate(cfg),
    "cv-epsilon": lambda cfg: pipeline.stage_cv_epsilon(cfg),
    "cv-delta": lambda cfg: pipeline.stage_cv_delta(cfg),
    "smooth": lambda cfg: pipeline.stage_smooth(cfg),
    "krige": lambda cfg: pipeline.stage_krige(cfg),
    "simulate": lambda cfg: pipeline.stage_simulate(cfg),
    "validate": lambda cfg: pipeline.stage_validate(cfg),
    "covariance-contours": lambda cfg: pipeline.stage_contours(cfg),
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsgeostat", description="Non-stationary geostatistics pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="YAML/JSON config file")
        p.add_argument("--input")
        p.add_argument("--x-col", dest="x_col")
        p.add_argument("--y-col", dest="y_col")
        p.add_argument("--value-col", dest="value_col")
        p.add_argument("--family", choices=["gaussian", "exponential", "matern", "cauchy"])
        p.add_argument("--nu", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=_floats, help="bandwidth grid, e.g. '1,2,4'")
        p.add_argument("--delta", type=_floats, help="smoothing bandwidth grid")
        p.add_argument("--anchor-dims", dest="anchor_dims", type=_ints)
        p.add_argument("--grid-dims", dest="grid_dims", type=_ints)
        p.add_argument("--neighborhood", help="auto, global or a neighbour count")
        p.add_argument("--n-directions", dest="n_directions", type=int)
        p.add_argument("--n-bins", dest="n_bins", type=int)
        p.add_argument("--radius-policy", dest="radius_policy", choices=["uniform", "quantile", "fwhm"])
        p.add_argument("--validation")
        p.add_argument("--n-realizations", dest="n_realizations", type=int)
        p.add_argument("--n-sweeps", dest="n_sweeps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--contour-levels", dest="contour_levels", type=_floats)
        p.add_argument("-o", "--output-dir", dest="output_dir")
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if args.config:
        base = RunConfig.load(args.config).__dict__.copy()
    skip = {"config", "command", "verbose"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    base.update(overrides)
    return RunConfig.from_dict(base)


def _summary(result):
    if result is None:
        return None
    if isinstance(result, (int, float, str)):
        return result
    if isinstance(result, dict):
        return {k: _summary(v) for k, v in result.items() if not hasattr(v, "shape")}
    if hasattr(result, "as_dict"):
        return result.as_dict()
    if hasattr(result, "m"):
        return {"n_anchors": result.m, "epsilon": result.epsilon}
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        cfg = make_config(args)
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    try:
        result = COMMANDS[args.command](cfg)
    except pipeline.StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    summary = _summary(result)
    if summary is not None:
        print(json.dumps(summary, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
