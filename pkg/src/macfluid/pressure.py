"""Solvers for the pressure Poisson system.

The system A p = b is symmetric positive semidefinite (see
:class:`macfluid.fdops.PoissonSystem`).  On fluid components without air
contact A is singular with the constants as null space, so a right hand
side is only solvable once its per-component mean is removed; solvers
here expect that and :func:`make_compatible` does it.  All solvers pin
the free constant by returning zero-mean pressure on such components.

Three routes with very different cost/accuracy trade-offs:

* :func:`solve_jacobi`: fixed iteration count, cheap, smooth error decay.
  The update mirrors the pressure across solid faces and sees zero beyond
  an open top, which makes the sweep a Richardson iteration with step
  h^2/4 and keeps the residual monotone.
* :func:`solve_pcg`: conjugate gradients preconditioned with an
  incomplete Cholesky factor without fill-in, iterated to a residual
  tolerance.  Falls back to diagonal preconditioning if the
  factorization hits a nonpositive pivot.
* :func:`solve_dense_direct`: dense least-squares reference for small
  grids, minimum-norm on singular components.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fdops import PoissonSystem, apply_poisson, cell_stencil
from .grids import OccupancyGrid, ScalarGrid, connected_components

logger = logging.getLogger(__name__)

DENSE_CELL_LIMIT = 4096


# ====== Null-space handling ======

def _closed_components(g: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Fluid component labels plus a per-component closed flag.

    A component is open when any of its cells touches the air above an
    open top; only closed components carry a constant null vector.
    """
    labels, count = connected_components(g)
    closed = np.ones(count, dtype=bool)
    if g.open_top and count:
        top = labels[-1, :]
        closed[top[top >= 0]] = False
    return labels, closed


def _remove_closed_means(values: np.ndarray, g: OccupancyGrid,
                         labels: np.ndarray, closed: np.ndarray) -> np.ndarray:
    fluid = g.fluid
    lab = labels[fluid]
    if lab.size == 0:
        return np.zeros_like(values)
    count = len(closed)
    sums = np.bincount(lab, weights=values[fluid], minlength=count)
    cnts = np.bincount(lab, minlength=count)
    means = np.where(closed & (cnts > 0), sums / np.maximum(cnts, 1), 0.0)
    out = values.copy()
    out[fluid] -= means[lab]
    out[~fluid] = 0.0
    return out


def make_compatible(sys: PoissonSystem) -> PoissonSystem:
    """Project the right hand side onto the range of A.

    Subtracts the mean of b over every closed fluid component and zeroes
    b on solid cells.  Open components are left untouched.
    """
    labels, closed = _closed_components(sys.g)
    b = _remove_closed_means(np.asarray(sys.b.values, dtype=np.float64), sys.g, labels, closed)
    return PoissonSystem(sys.g, ScalarGrid(sys.dims, b))


def residual_norm(sys: PoissonSystem, p: ScalarGrid) -> float:
    """Euclidean norm of A p - b over fluid cells."""
    r = apply_poisson(sys.g, p).values - sys.b.values
    return float(np.linalg.norm(r[sys.g.fluid]))


# ====== Jacobi ======

def solve_jacobi(sys: PoissonSystem, iters: int = 34) -> ScalarGrid:
    """Run a fixed number of Jacobi sweeps from a zero initial guess.

    Each sweep averages the four neighbor pressures (the cell's own value
    mirrored across solid faces, zero across an open top) plus h^2 b,
    reading only the previous iterate.  Zero-mean on closed components.
    """
    if iters < 0:
        raise ValueError(f"iteration count must be nonnegative, got {iters}")
    g = sys.g
    st = cell_stencil(g)
    fluid = g.fluid
    b = sys.b.values
    isolated = fluid & (st.diag == 0)
    if np.any(isolated & (b != 0.0)):
        raise ValueError("isolated fluid cell with nonzero right hand side")
    h2 = g.dims.h ** 2
    hb = h2 * b
    sc = st.solid_count
    p = np.zeros(g.dims.shape)
    for _ in range(iters):
        pp = np.pad(p, 1)
        nbr = (np.where(st.fluid_w, pp[1:-1, :-2], 0.0)
               + np.where(st.fluid_e, pp[1:-1, 2:], 0.0)
               + np.where(st.fluid_s, pp[:-2, 1:-1], 0.0)
               + np.where(st.fluid_n, pp[2:, 1:-1], 0.0))
        p = np.where(fluid, 0.25 * (hb + nbr + sc * p), 0.0)
    labels, closed = _closed_components(g)
    return ScalarGrid(g.dims, _remove_closed_means(p, g, labels, closed))


# ====== Preconditioned conjugate gradients ======

@dataclass(frozen=True)
class PcgInfo:
    """Outcome of a conjugate gradient solve."""

    iterations: int
    converged: bool
    relres: float
    preconditioner: str


@dataclass
class _Lattice:
    """Compressed view of the active fluid cells in row-major cell order."""

    n: int
    adiag: np.ndarray  # A diagonal per active cell
    off: float         # off-diagonal coefficient (-1/h^2)
    w: np.ndarray      # compressed index of the west/east/south/north
    e: np.ndarray      # fluid neighbor, -1 when absent
    s: np.ndarray
    nn: np.ndarray
    fronts: list       # anti-diagonal wavefronts in increasing i+j order
    active: np.ndarray  # 2d bool mask
    lab: np.ndarray    # component label per active cell
    closed: np.ndarray  # per-component closed flag


def _build_lattice(g: OccupancyGrid) -> _Lattice:
    st = cell_stencil(g)
    # cells with an all-solid neighborhood have an empty matrix row; they
    # stay out of the solve and keep pressure zero
    active = g.fluid & (st.diag > 0)
    n = int(np.count_nonzero(active))
    idx = np.full(g.dims.shape, -1, dtype=np.int64)
    idx[active] = np.arange(n)
    pi = np.pad(idx, 1, constant_values=-1)
    wi = np.where(st.fluid_w, pi[1:-1, :-2], -1)[active]
    ei = np.where(st.fluid_e, pi[1:-1, 2:], -1)[active]
    si = np.where(st.fluid_s, pi[:-2, 1:-1], -1)[active]
    ni = np.where(st.fluid_n, pi[2:, 1:-1], -1)[active]
    h2 = g.dims.h ** 2
    adiag = st.diag[active].astype(np.float64) / h2

    jj, ii = np.nonzero(active)
    diag_id = (ii + jj)
    order = np.arange(n)
    fronts = [order[diag_id == v] for v in range(int(diag_id.max()) + 1)] if n else []
    fronts = [f for f in fronts if f.size]

    labels, closed = _closed_components(g)
    return _Lattice(n, adiag, -1.0 / h2, wi, ei, si, ni, fronts, active,
                    labels[active], closed)


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """x[idx] with -1 entries reading as zero."""
    return np.where(idx >= 0, x[np.maximum(idx, 0)], 0.0)


def _matvec(lat: _Lattice, x: np.ndarray) -> np.ndarray:
    return lat.adiag * x + lat.off * (_gather(x, lat.w) + _gather(x, lat.e)
                                      + _gather(x, lat.s) + _gather(x, lat.nn))


def _ic0_factor(lat: _Lattice) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Incomplete Cholesky without fill-in, swept along anti-diagonals.

    Within one wavefront no cell depends on another, so each front is a
    vector step.  Returns (Ldiag, Lw, Ls) or None on a nonpositive pivot.
    """
    ldiag = np.zeros(lat.n)
    lw = np.zeros(lat.n)
    ls = np.zeros(lat.n)
    for front in lat.fronts:
        wi = lat.w[front]
        si = lat.s[front]
        gw = _gather(ldiag, wi)  # pivots of earlier fronts, 0 where absent
        gs = _gather(ldiag, si)
        fw = np.where(wi >= 0, lat.off / np.where(gw > 0, gw, 1.0), 0.0)
        fs = np.where(si >= 0, lat.off / np.where(gs > 0, gs, 1.0), 0.0)
        pivot = lat.adiag[front] - fw * fw - fs * fs
        # chain-shaped closed components make IC(0) complete, so the last
        # pivot of such a component lands on zero up to roundoff
        if np.any(pivot <= 1e-12 * lat.adiag[front]):
            return None
        ldiag[front] = np.sqrt(pivot)
        lw[front] = fw
        ls[front] = fs
    return ldiag, lw, ls


def _ic0_apply(lat: _Lattice, fac, r: np.ndarray) -> np.ndarray:
    """Solve L L^T z = r with the wavefront sweeps."""
    ldiag, lw, ls = fac
    y = np.zeros(lat.n)
    for front in lat.fronts:
        y[front] = (r[front] - lw[front] * _gather(y, lat.w[front])
                    - ls[front] * _gather(y, lat.s[front])) / ldiag[front]
    z = np.zeros(lat.n)
    for front in reversed(lat.fronts):
        ei = lat.e[front]
        ni = lat.nn[front]
        z[front] = (y[front] - _gather(lw, ei) * _gather(z, ei)
                    - _gather(ls, ni) * _gather(z, ni)) / ldiag[front]
    return z


def _project_out_constants(lat: _Lattice, x: np.ndarray) -> np.ndarray:
    count = len(lat.closed)
    if count == 0 or not lat.closed.any():
        return x
    sums = np.bincount(lat.lab, weights=x, minlength=count)
    cnts = np.bincount(lat.lab, minlength=count)
    means = np.where(lat.closed & (cnts > 0), sums / np.maximum(cnts, 1), 0.0)
    return x - means[lat.lab]


def solve_pcg(sys: PoissonSystem, tol: float = 1e-4,
              max_iter: int = 2000) -> tuple[ScalarGrid, PcgInfo]:
    """Conjugate gradients with an IC(0) preconditioner.

    Stops at the first iterate with ||A p - b|| <= tol * ||b|| (verified
    against the true residual, not just the recurrence).  The
    preconditioned residual and the iterate have their per-component
    means removed every iteration so closed components cannot drift along
    the null space.  Returns the pressure and a :class:`PcgInfo`.
    """
    g = sys.g
    lat = _build_lattice(g)
    out = np.zeros(g.dims.shape)

    bv = sys.b.values[lat.active]
    bnorm = float(np.linalg.norm(bv))
    if lat.n == 0 or bnorm == 0.0:
        return ScalarGrid(g.dims, out), PcgInfo(0, True, 0.0, "ic0")

    fac = _ic0_factor(lat)
    if fac is None:
        logger.warning("IC(0) factorization hit a nonpositive pivot; "
                       "falling back to diagonal preconditioning")
        pname = "diagonal"

        def precond(rv: np.ndarray) -> np.ndarray:
            return rv / lat.adiag
    else:
        pname = "ic0"

        def precond(rv: np.ndarray) -> np.ndarray:
            return _ic0_apply(lat, fac, rv)

    x = np.zeros(lat.n)
    r = bv.copy()
    z = _project_out_constants(lat, precond(r))
    d = z.copy()
    rz = float(r @ z)
    converged = False
    relres = 1.0
    iterations = 0
    for _ in range(max_iter):
        q = _matvec(lat, d)
        dq = float(d @ q)
        if dq <= 0.0:
            # search direction fell into the null space; only roundoff is left
            break
        alpha = rz / dq
        x = _project_out_constants(lat, x + alpha * d)
        r = r - alpha * q
        iterations += 1
        relres = float(np.linalg.norm(r)) / bnorm
        if relres <= tol:
            r_true = bv - _matvec(lat, x)
            relres = float(np.linalg.norm(r_true)) / bnorm
            if relres <= tol:
                converged = True
                break
            r = r_true
        z = _project_out_constants(lat, precond(r))
        rz_new = float(r @ z)
        beta = rz_new / rz
        d = z + beta * d
        rz = rz_new

    if not converged:
        logger.warning("PCG stopped after %d iterations at relative residual %.3e "
                       "(tol %.3e)", iterations, relres, tol)
    out[lat.active] = x
    return ScalarGrid(g.dims, out), PcgInfo(iterations, converged, relres, pname)


# ====== Dense reference ======

def solve_dense_direct(sys: PoissonSystem) -> ScalarGrid:
    """Assemble A densely and solve by least squares.

    Minimum-norm on singular components, then re-pinned to zero mean per
    closed component.  Guarded by a cell-count cap; this is a reference
    oracle, not a production path.
    """
    g = sys.g
    if g.n_fluid > DENSE_CELL_LIMIT:
        raise ValueError(f"dense solve capped at {DENSE_CELL_LIMIT} fluid cells, "
                         f"got {g.n_fluid}")
    st = cell_stencil(g)
    fluid = g.fluid
    n = g.n_fluid
    idx = np.full(g.dims.shape, -1, dtype=np.int64)
    idx[fluid] = np.arange(n)
    h2 = g.dims.h ** 2
    A = np.zeros((n, n))
    rows = idx[fluid]
    A[rows, rows] = st.diag[fluid] / h2
    pi = np.pad(idx, 1, constant_values=-1)
    for mask, nbr in ((st.fluid_w, pi[1:-1, :-2]), (st.fluid_e, pi[1:-1, 2:]),
                      (st.fluid_s, pi[:-2, 1:-1]), (st.fluid_n, pi[2:, 1:-1])):
        m = mask & fluid
        A[idx[m], nbr[m]] = -1.0 / h2
    bv = sys.b.values[fluid]
    x, *_ = np.linalg.lstsq(A, bv, rcond=None)
    out = np.zeros(g.dims.shape)
    out[fluid] = x
    labels, closed = _closed_components(g)
    return ScalarGrid(g.dims, _remove_closed_means(out, g, labels, closed))
