"""Staggered-grid containers and geometric queries for 2D flow domains.

Index convention, used everywhere in this package: cell (i, j) has i along
x and j along y, arrays are stored row major with j as the slow axis, so a
cell field has shape (ny, nx) and is indexed ``values[j, i]``.  Flattening
a cell field with ``ravel()`` therefore enumerates cells as i + nx * j.
The center of cell (i, j) sits at ((i + 0.5) * h, (j + 0.5) * h).

Velocity lives on cell faces.  ``ux[j, i]`` is the x component on the
vertical face at (i * h, (j + 0.5) * h), between cells (i - 1, j) and
(i, j), shape (ny, nx + 1).  ``uy[j, i]`` is the y component on the
horizontal face at ((i + 0.5) * h, j * h), shape (ny + 1, nx).

The domain border behaves as a one cell solid wall.  With ``open_top``
set on the occupancy grid, the virtual row of cells above the top border
is open air instead: not solid, not fluid, held at zero pressure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class GridDims:
    """Grid resolution and uniform cell size."""

    nx: int
    ny: int
    h: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"cell size must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def shape_ux(self) -> tuple[int, int]:
        return (self.ny, self.nx + 1)

    @property
    def shape_uy(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_centers(self) -> np.ndarray:
        """Positions of all cell centers, shape (ny, nx, 2)."""
        x = (np.arange(self.nx) + 0.5) * self.h
        y = (np.arange(self.ny) + 0.5) * self.h
        out = np.empty((self.ny, self.nx, 2))
        out[..., 0] = x[None, :]
        out[..., 1] = y[:, None]
        return out


def _check_shape(name: str, arr: np.ndarray, shape: tuple[int, int]) -> None:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class ScalarGrid:
    """A cell-centered scalar field (pressure, density, divergence, ...)."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        _check_shape("scalar field", self.values, self.dims.shape)

    @classmethod
    def zeros(cls, dims: GridDims, dtype=np.float64) -> "ScalarGrid":
        return cls(dims, np.zeros(dims.shape, dtype=dtype))

    @classmethod
    def full(cls, dims: GridDims, value: float, dtype=np.float64) -> "ScalarGrid":
        return cls(dims, np.full(dims.shape, value, dtype=dtype))

    def copy(self) -> "ScalarGrid":
        return ScalarGrid(self.dims, self.values.copy())


@dataclass
class MacVelocity:
    """Face-sampled velocity: ux on vertical faces, uy on horizontal faces."""

    dims: GridDims
    ux: np.ndarray
    uy: np.ndarray

    def __post_init__(self) -> None:
        self.ux = np.asarray(self.ux)
        self.uy = np.asarray(self.uy)
        _check_shape("ux", self.ux, self.dims.shape_ux)
        _check_shape("uy", self.uy, self.dims.shape_uy)

    @classmethod
    def zeros(cls, dims: GridDims, dtype=np.float64) -> "MacVelocity":
        return cls(dims, np.zeros(dims.shape_ux, dtype=dtype), np.zeros(dims.shape_uy, dtype=dtype))

    def copy(self) -> "MacVelocity":
        return MacVelocity(self.dims, self.ux.copy(), self.uy.copy())

    def max_speed(self) -> float:
        """Largest face-sample magnitude over both components."""
        mx = float(np.max(np.abs(self.ux))) if self.ux.size else 0.0
        my = float(np.max(np.abs(self.uy))) if self.uy.size else 0.0
        return max(mx, my)

    def all_samples(self) -> np.ndarray:
        """All face samples of both components as one flat vector."""
        return np.concatenate([self.ux.ravel(), self.uy.ravel()])


@dataclass
class OccupancyGrid:
    """Cell-centered solid geometry plus the border condition of the domain.

    ``solid[j, i]`` is True on cells occupied by static solid.  Cells that
    are not solid are fluid.  ``open_top`` switches the border above the
    top cell row from solid wall to zero-pressure air.
    """

    dims: GridDims
    solid: np.ndarray
    open_top: bool = False

    def __post_init__(self) -> None:
        self.solid = np.asarray(self.solid)
        _check_shape("solid mask", self.solid, self.dims.shape)
        if self.solid.dtype != np.bool_:
            raise ValueError(f"solid mask must be boolean, got dtype {self.solid.dtype}")

    @classmethod
    def empty(cls, dims: GridDims, open_top: bool = False) -> "OccupancyGrid":
        return cls(dims, np.zeros(dims.shape, dtype=bool), open_top)

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    @property
    def n_fluid(self) -> int:
        return int(np.count_nonzero(self.fluid))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.dims, self.solid.copy(), self.open_top)


@dataclass
class DistanceField:
    """Per-cell distance to the nearest solid cell, in cell units."""

    dims: GridDims
    d: np.ndarray

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d)
        _check_shape("distance field", self.d, self.dims.shape)


# ====== Bilinear sampling ======

def _bilinear(values: np.ndarray, x: np.ndarray, y: np.ndarray, offx: float,
              offy: float, h: float, with_bounds: bool = False):
    """Bilinear interpolation on a lattice whose node (c, r) sits at
    ((c + offx) * h, (r + offy) * h).

    Positions outside the lattice are clamped to the border sample band
    first, so no value outside the convex hull of samples is ever produced.
    Returns the interpolated values, plus the min and max over the four
    support samples when ``with_bounds`` is set.
    """
    nrows, ncols = values.shape
    fx = np.clip(x / h - offx, 0.0, ncols - 1.0)
    fy = np.clip(y / h - offy, 0.0, nrows - 1.0)
    i0 = np.minimum(fx.astype(np.int64), ncols - 2)
    j0 = np.minimum(fy.astype(np.int64), nrows - 2)
    tx = fx - i0
    ty = fy - j0
    v00 = values[j0, i0]
    v01 = values[j0, i0 + 1]
    v10 = values[j0 + 1, i0]
    v11 = values[j0 + 1, i0 + 1]
    top = v00 + tx * (v01 - v00)
    bot = v10 + tx * (v11 - v10)
    out = top + ty * (bot - top)
    if not with_bounds:
        return out
    lo = np.minimum(np.minimum(v00, v01), np.minimum(v10, v11))
    hi = np.maximum(np.maximum(v00, v01), np.maximum(v10, v11))
    return out, lo, hi


def _split_pos(pos) -> tuple[np.ndarray, np.ndarray, bool]:
    p = np.asarray(pos, dtype=np.float64)
    if p.shape[-1] != 2:
        raise ValueError(f"positions must have a trailing axis of size 2, got shape {p.shape}")
    single = p.ndim == 1
    return p[..., 0], p[..., 1], single


def sample_scalar(grid: ScalarGrid, pos) -> np.ndarray | float:
    """Bilinear sample of a cell-centered field at world positions.

    ``pos`` is one position of shape (2,) or an array of positions with a
    trailing axis of size 2.
    """
    x, y, single = _split_pos(pos)
    out = _bilinear(grid.values, x, y, 0.5, 0.5, grid.dims.h)
    return float(out) if single else out


def sample_velocity(u: MacVelocity, pos) -> np.ndarray:
    """Bilinear sample of a face-sampled velocity at world positions.

    Each component is interpolated on its own face lattice.  Returns an
    array with a trailing axis of size 2.
    """
    x, y, _ = _split_pos(pos)
    h = u.dims.h
    vx = _bilinear(u.ux, x, y, 0.0, 0.5, h)
    vy = _bilinear(u.uy, x, y, 0.5, 0.0, h)
    return np.stack([vx, vy], axis=-1)


# ====== Geometry queries ======

def distance_field(g: OccupancyGrid) -> DistanceField:
    """Euclidean distance from each cell center to the nearest solid cell
    center, in units of h.  Zero on solid cells.  If the grid holds no
    solid at all, every entry is +inf.
    """
    if not g.solid.any():
        return DistanceField(g.dims, np.full(g.dims.shape, np.inf))
    d = ndimage.distance_transform_edt(g.fluid)
    return DistanceField(g.dims, d)


def connected_components(g: OccupancyGrid) -> tuple[np.ndarray, int]:
    """Label 4-connected components of the fluid region.

    Returns (labels, count); labels hold 0..count-1 on fluid cells and -1
    on solid cells.
    """
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)
    raw, count = ndimage.label(g.fluid, structure=four)
    return raw.astype(np.int32) - 1, int(count)
