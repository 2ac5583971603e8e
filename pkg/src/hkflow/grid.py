"""Uniform 1D grids and the conservative discrete calculus used by the flows.

Cells carry averages, faces carry fluxes. On the circle face ``j`` sits between
cells ``j`` and ``j + 1`` (indices mod ``n``); on the interval face ``k`` sits
between cells ``k - 1`` and ``k`` and faces ``0`` and ``n`` are the walls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class DomainKind(str, Enum):
    CIRCLE = "circle"
    INTERVAL = "interval"


@dataclass(frozen=True)
class Grid:
    kind: DomainKind
    n_cells: int
    length: float = 1.0
    h: float = field(init=False)
    cell_centers: np.ndarray = field(init=False, repr=False, compare=False)
    face_positions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = DomainKind(self.kind)
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells!r}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length!r}")
        h = self.length / self.n_cells
        centers = (np.arange(self.n_cells) + 0.5) * h
        if kind is DomainKind.CIRCLE:
            faces = (np.arange(self.n_cells) + 1.0) * h
        else:
            faces = np.arange(self.n_cells + 1) * h
        centers.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "cell_centers", centers)
        object.__setattr__(self, "face_positions", faces)

    @classmethod
    def circle(cls, n_cells: int, length: float = 1.0) -> "Grid":
        return cls(DomainKind.CIRCLE, n_cells, length)

    @classmethod
    def interval(cls, n_cells: int, length: float = 1.0) -> "Grid":
        return cls(DomainKind.INTERVAL, n_cells, length)

    @property
    def periodic(self) -> bool:
        return self.kind is DomainKind.CIRCLE

    @property
    def n_faces(self) -> int:
        return self.n_cells if self.periodic else self.n_cells + 1

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_cells, self.h)


def _next(u):
    return np.concatenate((u[1:], u[:1]))


def _prev(u):
    return np.concatenate((u[-1:], u[:-1]))


def _check(values, expected: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (expected,):
        raise ValueError(f"{what} must have shape ({expected},), got {arr.shape}")
    return arr


def integrate(grid: Grid, field) -> float:
    """Midpoint rule ``h * sum(field)``."""
    arr = _check(field, grid.n_cells, "field")
    return float(grid.h * arr.sum())


def gradient_faces(grid: Grid, field) -> np.ndarray:
    u = _check(field, grid.n_cells, "field")
    if grid.periodic:
        return (_next(u) - u) / grid.h
    g = np.zeros(grid.n_cells + 1)
    g[1:-1] = np.diff(u) / grid.h
    return g


def divergence_cells(grid: Grid, flux) -> np.ndarray:
    F = _check(flux, grid.n_faces, "flux")
    if grid.periodic:
        return (F - _prev(F)) / grid.h
    return np.diff(F) / grid.h


def average_faces(grid: Grid, field) -> np.ndarray:
    """Arithmetic mean of the two neighbouring cells; wall faces get the wall cell."""
    u = _check(field, grid.n_cells, "field")
    if grid.periodic:
        return 0.5 * (u + _next(u))
    out = np.empty(grid.n_cells + 1)
    out[1:-1] = 0.5 * (u[:-1] + u[1:])
    out[0], out[-1] = u[0], u[-1]
    return out


def face_neighbours(grid: Grid, field) -> tuple[np.ndarray, np.ndarray]:
    """Cell values to the left and right of every face (walls repeat the wall cell)."""
    u = _check(field, grid.n_cells, "field")
    if grid.periodic:
        return u, _next(u)
    left = np.concatenate(([u[0]], u))
    right = np.concatenate((u, [u[-1]]))
    return left, right


def zero_walls(grid: Grid, flux: np.ndarray) -> np.ndarray:
    if not grid.periodic:
        flux[0] = 0.0
        flux[-1] = 0.0
    return flux


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def reconstruct_faces(grid: Grid, field) -> tuple[np.ndarray, np.ndarray]:
    """Minmod-limited linear reconstruction: (left state, right state) at every face.

    Reconstructed values lie between neighbouring cell values, so nonnegative
    fields stay nonnegative.  Wall cells of the interval use zero slope.
    """
    u = _check(field, grid.n_cells, "field")
    if grid.periodic:
        slope = _minmod(u - _prev(u), _next(u) - u)
        left = u + 0.5 * slope
        right = _next(u - 0.5 * slope)
        return left, right
    slope = np.zeros_like(u)
    slope[1:-1] = _minmod(u[1:-1] - u[:-2], u[2:] - u[1:-1])
    left = np.concatenate(([u[0]], u + 0.5 * slope))
    right = np.concatenate((u - 0.5 * slope, [u[-1]]))
    return left, right
