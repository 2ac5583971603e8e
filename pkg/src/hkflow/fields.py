from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, integrate


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nonnegative cell averages on a grid, with the midpoint mass cached."""

    grid: Grid
    values: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_cells,):
            raise ValueError(f"density must have shape ({self.grid.n_cells},), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density has non-finite entries")
        if np.any(vals < 0):
            raise ValueError(f"density must be nonnegative (min {vals.min():.3e})")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mass", integrate(self.grid, vals))

    @classmethod
    def from_function(cls, grid: Grid, fn, normalize: float | None = None) -> "DensityField":
        vals = np.asarray(fn(grid.cell_centers), dtype=float) * np.ones(grid.n_cells)
        if normalize is not None:
            vals = vals * (normalize / integrate(grid, vals))
        return cls(grid, vals)

    def scaled(self, factor: float) -> "DensityField":
        return DensityField(self.grid, self.values * factor)

    def __len__(self):
        return self.grid.n_cells
