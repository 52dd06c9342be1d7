"""File formats and run configuration.

Inputs are delimited text with a header row.  Grids are written as
delimited text preceded by ``# key: value`` header lines holding the
origin, cell size and dimensions, so any plotting tool can read them.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .anisotropy import AnisotropyParams
from .estimation import LocalFit, ParameterField
from .covariance import make_family
from .grid import Grid
from .variogram import DUPLICATE_TOL, Dataset

log = logging.getLogger(__name__)

ANCHOR_COLUMNS = ("x", "y", "mean", "sigma", "lambda1", "lambda2", "psi", "objective", "converged", "at_bound")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    input: str = ""
    x_col: str = "x"
    y_col: str = "y"
    value_col: str = "value"
    delimiter: str = ","
    family: str = "exponential"
    nu: float = 1.5
    alpha: float = 1.0
    epsilon: list = field(default_factory=lambda: [1.0])
    delta: list = field(default_factory=list)
    anchor_dims: list = field(default_factory=lambda: [12, 12])
    neighborhood: str = "auto"
    n_directions: int = 4
    n_bins: int = 10
    radius_policy: str = "uniform"
    grid_dims: list = field(default_factory=lambda: [50, 50])
    validation: str = ""
    n_realizations: int = 0
    n_sweeps: int = 100
    seed: int = 0
    output_dir: str = "out"
    contour_points: list = field(default_factory=list)
    contour_levels: list = field(default_factory=lambda: [0.25, 0.5, 0.75])

    def __post_init__(self):
        self.epsilon = [float(e) for e in np.atleast_1d(self.epsilon)]
        self.delta = [float(d) for d in np.atleast_1d(self.delta)] if self.delta is not None else []
        self.anchor_dims = [int(v) for v in self.anchor_dims]
        self.grid_dims = [int(v) for v in self.grid_dims]
        if not self.epsilon:
            raise ConfigError("epsilon grid must be non-empty")
        if any(e <= 0 for e in self.epsilon) or any(d <= 0 for d in self.delta):
            raise ConfigError("bandwidths must be positive")
        if len(self.anchor_dims) != 2 or min(self.anchor_dims) < 1:
            raise ConfigError("anchor_dims must be two positive counts")
        if len(self.grid_dims) != 2 or min(self.grid_dims) < 1:
            raise ConfigError("grid_dims must be two positive counts")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a YAML (or JSON, which YAML accepts) key-value file."""
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(d)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(asdict(self), fh, sort_keys=False)

    def make_family(self):
        return make_family(self.family, 1.0, self.nu, self.alpha)


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------
def average_duplicates(locations, values, tol: float = DUPLICATE_TOL):
    """Merge points closer than ``tol`` into one record holding their mean value."""
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree
    from scipy.sparse import coo_matrix

    n = len(values)
    if n < 2:
        return locations, values, 0
    pairs = cKDTree(locations).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return locations, values, 0
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, label = connected_components(adj, directed=False)
    counts = np.bincount(label, minlength=k)
    vals = np.bincount(label, weights=values, minlength=k) / counts
    first = np.full(k, n)
    np.minimum.at(first, label, np.arange(n))
    return locations[first], vals, n - k


def load_dataset(path, config: RunConfig | None = None) -> Dataset:
    """Read observations; drop non-finite rows and average duplicate locations (with warnings)."""
    config = config or RunConfig()
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=config.delimiter)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        cols = [c.strip() for c in reader.fieldnames]
        reader.fieldnames = cols
        missing = [c for c in (config.x_col, config.y_col, config.value_col) if c not in cols]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [(r[config.x_col], r[config.y_col], r[config.value_col]) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def num(s):
        try:
            return float(s)
        except (TypeError, ValueError):
            return math.nan

    arr = np.array([[num(a), num(b), num(c)] for a, b, c in rows])
    ok = np.all(np.isfinite(arr), axis=1)
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} row(s) with non-finite coordinates or values", stacklevel=2)
    arr = arr[ok]
    if len(arr) == 0:
        raise ValueError(f"{path}: no finite rows")
    locs, vals, merged = average_duplicates(arr[:, :2], arr[:, 2])
    if merged:
        warnings.warn(f"{path}: averaged {merged} duplicate location(s)", stacklevel=2)
    return Dataset(locs, vals)


def write_dataset(path, data: Dataset, names=("x", "y", "value")) -> None:
    np.savetxt(
        path,
        np.column_stack([data.locations, data.values]),
        delimiter=",",
        header=",".join(names),
        comments="",
        fmt="%.17g",
    )


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------
def write_grid(path, grid: Grid, values, name: str = "value") -> None:
    """Write grid values as rows of y (south to north), columns of x."""
    arr = grid.reshape(values)
    with open(path, "w") as fh:
        fh.write(f"# name: {name}\n")
        fh.write(f"# origin: {grid.origin[0]!r} {grid.origin[1]!r}\n")
        fh.write(f"# cell: {grid.cell[0]!r} {grid.cell[1]!r}\n")
        fh.write(f"# dims: {grid.nx} {grid.ny}\n")
        np.savetxt(fh, arr, delimiter=",", fmt="%.17g")


def read_grid(path) -> tuple[Grid, np.ndarray]:
    header = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.split()
    try:
        origin = [float(v) for v in header["origin"]]
        cell = [float(v) for v in header["cell"]]
        dims = [int(v) for v in header["dims"]]
    except KeyError as exc:
        raise ValueError(f"{path}: missing grid header {exc}") from None
    grid = Grid(origin, cell, dims)
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if values.shape != (grid.ny, grid.nx):
        raise ValueError(f"{path}: values shape {values.shape} does not match dims")
    return grid, values.ravel()


# --------------------------------------------------------------------------
# anchor tables
# --------------------------------------------------------------------------
def write_anchors(path, pf: ParameterField) -> None:
    """Per-anchor raw estimates; also the ellipse table (centre, lambda1, lambda2, psi)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# epsilon: {pf.epsilon!r}\n")
        fh.write(f"# family: {json.dumps(_family_dict(pf.family))}\n")
        if pf.delta is not None:
            fh.write(f"# delta: {pf.delta!r}\n")
        w = csv.writer(fh)
        w.writerow(ANCHOR_COLUMNS)
        for a, f, m in zip(pf.anchors, pf.fits, pf.raw_mean):
            w.writerow(
                [repr(float(a[0])), repr(float(a[1])), repr(float(m)), repr(f.sigma), repr(f.aniso.lambda1),
                 repr(f.aniso.lambda2), repr(f.aniso.psi), repr(float(f.objective)), int(f.converged), int(f.at_bound)]
            )


def _family_dict(family) -> dict:
    d = {"name": family.name, "a": family.a}
    for attr in ("nu", "alpha"):
        v = getattr(family, attr, None)
        if v is not None:
            if callable(v):
                raise ValueError("cannot serialize a spatially varying family parameter")
            d[attr] = float(v)
    return d


def read_anchors(path) -> ParameterField:
    header = {}
    with open(path, newline="") as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.DictReader(body))
    if not rows:
        raise ValueError(f"{path}: no anchors")
    fam = json.loads(header["family"])
    family = make_family(fam["name"], fam.get("a", 1.0), fam.get("nu", 1.5), fam.get("alpha", 1.0))
    anchors, fits, means = [], [], []
    for r in rows:
        x0 = np.array([float(r["x"]), float(r["y"])])
        anchors.append(x0)
        means.append(float(r["mean"]))
        fits.append(
            LocalFit(
                x0=x0,
                sigma=float(r["sigma"]),
                aniso=AnisotropyParams(float(r["lambda1"]), float(r["lambda2"]), float(r["psi"])),
                objective=float(r["objective"]),
                converged=bool(int(r["converged"])),
                family=family,
                at_bound=bool(int(r["at_bound"])),
            )
        )
    delta = float(header["delta"]) if "delta" in header else None
    return ParameterField(np.array(anchors), fits, np.array(means), family, float(header["epsilon"]), delta)


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------
def write_table(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("empty table")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
