"""Regular 2-D grids used for prediction, simulation and the convolution oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Cell-centred regular grid; ``origin`` is the centre of cell (0, 0)."""

    origin: tuple[float, float]
    cell: tuple[float, float]
    dims: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell", (float(self.cell[0]), float(self.cell[1])))
        object.__setattr__(self, "dims", (int(self.dims[0]), int(self.dims[1])))
        if min(self.dims) < 1:
            raise ValueError("grid dims must be >= 1")
        if min(self.cell) <= 0:
            raise ValueError("grid cells must be positive")

    @classmethod
    def covering(cls, lo, hi, dims) -> "Grid":
        """Grid of ``dims`` cells exactly tiling the box ``[lo, hi]``."""
        nx, ny = int(dims[0]), int(dims[1])
        dx = (hi[0] - lo[0]) / nx
        dy = (hi[1] - lo[1]) / ny
        return cls((lo[0] + dx / 2, lo[1] + dy / 2), (dx, dy), (nx, ny))

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.cell[0] * self.cell[1]

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.cell[0] * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.cell[1] * np.arange(self.ny)

    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Outer edges ``((xmin, ymin), (xmax, ymax))`` of the grid cells."""
        x0 = self.origin[0] - self.cell[0] / 2
        y0 = self.origin[1] - self.cell[1] / 2
        return (x0, y0), (x0 + self.nx * self.cell[0], y0 + self.ny * self.cell[1])

    def points(self) -> np.ndarray:
        """Cell centres as ``(ny * nx, 2)``, x varying fastest."""
        gx, gy = np.meshgrid(self.xs(), self.ys())
        return np.column_stack([gx.ravel(), gy.ravel()])

    def reshape(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.ny, self.nx)

    def nearest_index(self, pts) -> np.ndarray:
        """Flat index of the cell containing each point (clipped to the grid)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ix = np.rint((pts[:, 0] - self.origin[0]) / self.cell[0]).astype(int)
        iy = np.rint((pts[:, 1] - self.origin[1]) / self.cell[1]).astype(int)
        ix = np.clip(ix, 0, self.nx - 1)
        iy = np.clip(iy, 0, self.ny - 1)
        return iy * self.nx + ix
