"""Discrete differential operators on the staggered grid.

All operators are pure: they never mutate their inputs.  Geometry enters
through an OccupancyGrid, whose border is solid wall except for the open
air row above the top when ``open_top`` is set.

Face classification: a face is *solid* when either adjacent cell (or the
border behind it) is solid; it is *free* when it is not solid and at
least one adjacent cell is fluid.  Free faces are exactly the ones a
pressure gradient update touches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridDims, MacVelocity, OccupancyGrid, ScalarGrid


# ====== Neighborhood masks ======

def _padded_masks(g: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Solid and fluid masks padded with one border ring.

    The ring is solid wall everywhere except above the top row in open-top
    mode, where it is air (neither solid nor fluid).
    """
    psolid = np.pad(g.solid, 1, constant_values=True)
    if g.open_top:
        psolid[-1, 1:-1] = False
    pfluid = np.pad(g.fluid, 1, constant_values=False)
    return psolid, pfluid


@dataclass(frozen=True)
class CellStencil:
    """Per-cell neighbor masks for the 5-point pressure stencil.

    ``fluid_*`` flag a fluid neighbor in each direction, ``solid_count``
    counts solid neighbors (border included) and ``diag`` counts non-solid
    neighbors, which is the diagonal of the pressure system.
    """

    fluid: np.ndarray
    fluid_w: np.ndarray
    fluid_e: np.ndarray
    fluid_s: np.ndarray
    fluid_n: np.ndarray
    solid_count: np.ndarray
    diag: np.ndarray


def cell_stencil(g: OccupancyGrid) -> CellStencil:
    psolid, pfluid = _padded_masks(g)
    fw = pfluid[1:-1, :-2]
    fe = pfluid[1:-1, 2:]
    fs = pfluid[:-2, 1:-1]
    fn = pfluid[2:, 1:-1]
    sc = (psolid[1:-1, :-2].astype(np.int64) + psolid[1:-1, 2:]
          + psolid[:-2, 1:-1] + psolid[2:, 1:-1])
    return CellStencil(g.fluid, fw, fe, fs, fn, sc, 4 - sc)


@dataclass(frozen=True)
class FaceMasks:
    """Solid and free flags for every face of the grid."""

    solid_x: np.ndarray
    solid_y: np.ndarray
    free_x: np.ndarray
    free_y: np.ndarray


def face_masks(g: OccupancyGrid) -> FaceMasks:
    psolid, pfluid = _padded_masks(g)
    solid_x = psolid[1:-1, :-1] | psolid[1:-1, 1:]
    solid_y = psolid[:-1, 1:-1] | psolid[1:, 1:-1]
    fluid_x = pfluid[1:-1, :-1] | pfluid[1:-1, 1:]
    fluid_y = pfluid[:-1, 1:-1] | pfluid[1:, 1:-1]
    return FaceMasks(solid_x, solid_y, ~solid_x & fluid_x, ~solid_y & fluid_y)


# ====== First-order operators ======

def divergence(u: MacVelocity, g: OccupancyGrid) -> ScalarGrid:
    """Per-cell net outflow (ux_e - ux_w + uy_n - uy_s) / h.

    Uses the stored face values as they are; zero on solid cells.
    """
    h = u.dims.h
    div = (u.ux[:, 1:] - u.ux[:, :-1] + u.uy[1:, :] - u.uy[:-1, :]) / h
    div[g.solid] = 0.0
    return ScalarGrid(u.dims, div)


def _face_gradient(p: ScalarGrid, g: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Pressure difference across each free face, zero elsewhere.

    Air cells beyond an open top contribute pressure zero.
    """
    h = p.dims.h
    fm = face_masks(g)
    pp = np.pad(p.values, 1, constant_values=0.0)
    gx = np.where(fm.free_x, pp[1:-1, 1:] - pp[1:-1, :-1], 0.0)
    gy = np.where(fm.free_y, pp[1:, 1:-1] - pp[:-1, 1:-1], 0.0)
    return gx / h, gy / h


def subtract_pressure_gradient(u: MacVelocity, p: ScalarGrid, g: OccupancyGrid) -> MacVelocity:
    """u - grad(p) on free faces; solid faces keep their stored values."""
    gx, gy = _face_gradient(p, g)
    return MacVelocity(u.dims, u.ux - gx, u.uy - gy)


def adjoint_divergence(p: ScalarGrid, g: OccupancyGrid) -> MacVelocity:
    """Exact adjoint of :func:`divergence` under the flat inner products.

    For any velocity v with zero samples on solid faces and any cell field
    p, <divergence(v), p> == <v, adjoint_divergence(p)>.  It equals the
    negated free-face gradient of p.
    """
    gx, gy = _face_gradient(p, g)
    return MacVelocity(p.dims, -gx, -gy)


def vorticity(u: MacVelocity) -> ScalarGrid:
    """Scalar curl at cell centers.

    Face samples are first averaged to centers, then differenced with
    central differences inside and one-sided differences on the border.
    """
    h = u.dims.h
    ucx = 0.5 * (u.ux[:, :-1] + u.ux[:, 1:])
    ucy = 0.5 * (u.uy[:-1, :] + u.uy[1:, :])
    duy_dx = np.gradient(ucy, h, axis=1)
    dux_dy = np.gradient(ucx, h, axis=0)
    return ScalarGrid(u.dims, duy_dx - dux_dy)


# ====== Pressure system ======

@dataclass
class PoissonSystem:
    """The linear system A p = b of the pressure projection.

    A is the 5-point Laplacian over fluid cells scaled by 1/h^2, with the
    diagonal counting non-solid neighbors.  Solid neighbors drop out
    (mirror condition), air neighbors beyond an open top keep the diagonal
    contribution but add no off-diagonal term (their pressure is zero).
    A is symmetric positive semidefinite; it is singular exactly on the
    constants of each fluid component not in contact with air.
    """

    g: OccupancyGrid
    b: ScalarGrid

    @property
    def dims(self) -> GridDims:
        return self.g.dims


def apply_poisson(g: OccupancyGrid, p: ScalarGrid) -> ScalarGrid:
    """Matrix-free action A p of the pressure system; zero on solid cells."""
    st = cell_stencil(g)
    h2 = g.dims.h ** 2
    pv = p.values
    pp = np.pad(pv, 1, constant_values=0.0)
    nbr = (np.where(st.fluid_w, pp[1:-1, :-2], 0.0)
           + np.where(st.fluid_e, pp[1:-1, 2:], 0.0)
           + np.where(st.fluid_s, pp[:-2, 1:-1], 0.0)
           + np.where(st.fluid_n, pp[2:, 1:-1], 0.0))
    out = (st.diag * pv - nbr) / h2
    out[g.solid] = 0.0
    return ScalarGrid(p.dims, out)
