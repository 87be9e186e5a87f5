"""Single-step velocity update and the multi-step simulation driver.

A step executes, in order: inflow overwrite (when configured), density
advection through the previous velocity, velocity self-advection, body
force, buoyancy, vorticity confinement, solid-face enforcement, pressure
projection with the configured backend, and a final enforcement pass.
The projection backend is pluggable: Jacobi, PCG, a dense direct solve,
a learned network, or nothing at all for ablation baselines.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .advection import advect_scalar, self_advect
from .convnet import NetParams, learned_project
from .fdops import divergence, subtract_pressure_gradient
from .forces import (ForceConfig, add_body_force, add_buoyancy,
                     enforce_solid_velocities, vorticity_confinement)
from .formats import write_frame, write_pgm
from .grids import GridDims, MacVelocity, OccupancyGrid, ScalarGrid
from .pressure import (PoissonSystem, make_compatible, solve_dense_direct,
                       solve_jacobi, solve_pcg)

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """The simulation produced non-finite fields and was aborted."""


# ====== Projection backends ======

@dataclass(frozen=True)
class JacobiProjection:
    iters: int = 34


@dataclass(frozen=True)
class PcgProjection:
    tol: float = 1e-4
    max_iter: int = 2000


@dataclass(frozen=True)
class ExactProjection:
    """Dense direct solve; small grids only."""


@dataclass(frozen=True)
class NoProjection:
    """Skip the projection entirely (ablation baseline)."""


@dataclass(frozen=True)
class ConvnetProjection:
    params: NetParams


# ====== State and configuration ======

@dataclass(frozen=True)
class InflowRegion:
    """A disc of cells whose density and velocity are pinned each step.

    ``center`` and ``radius`` are in cell units.  Density is overwritten
    on cells whose center lies inside the disc, velocity on faces whose
    midpoint does.
    """

    center: tuple[float, float]
    radius: float
    velocity: tuple[float, float]
    density: float = 1.0

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"inflow radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 30.0
    advection: str = "maccormack"
    forces: ForceConfig = field(default_factory=ForceConfig)
    projection: object = field(default_factory=PcgProjection)
    inflow: tuple[InflowRegion, ...] = ()
    dump_path: str | None = None  # non-finite abort writes the frame here

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")


@dataclass
class SimState:
    u: MacVelocity
    density: ScalarGrid
    g: OccupancyGrid
    frame: int = 0
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.u.copy(), self.density.copy(), self.g, self.frame, self.time)


# ====== The step ======

def _all_finite(u: MacVelocity, density: ScalarGrid) -> bool:
    return bool(np.all(np.isfinite(u.ux)) and np.all(np.isfinite(u.uy))
                and np.all(np.isfinite(density.values)))


def _apply_inflow(u: MacVelocity, density: ScalarGrid, g: OccupancyGrid,
                  regions: tuple[InflowRegion, ...]) -> tuple[MacVelocity, ScalarGrid]:
    dims = g.dims
    ux, uy = u.ux.copy(), u.uy.copy()
    rho = density.values.copy()
    ci, cj = np.meshgrid(np.arange(dims.nx) + 0.5, np.arange(dims.ny) + 0.5)
    fxi, fxj = np.meshgrid(np.arange(dims.nx + 1.0), np.arange(dims.ny) + 0.5)
    fyi, fyj = np.meshgrid(np.arange(dims.nx) + 0.5, np.arange(dims.ny + 1.0))
    for r in regions:
        cx, cy = r.center
        inside = (ci - cx) ** 2 + (cj - cy) ** 2 <= r.radius ** 2
        rho[inside & g.fluid] = r.density
        ux[(fxi - cx) ** 2 + (fxj - cy) ** 2 <= r.radius ** 2] = r.velocity[0]
        uy[(fyi - cx) ** 2 + (fyj - cy) ** 2 <= r.radius ** 2] = r.velocity[1]
    return MacVelocity(dims, ux, uy), ScalarGrid(dims, rho)


def project_velocity(u: MacVelocity, g: OccupancyGrid, backend,
                     tape_sink: list | None = None,
                     info_sink: list | None = None) -> MacVelocity:
    """One pressure projection of a tentative velocity.

    ``tape_sink`` collects the backward tape of a learned projection;
    ``info_sink`` collects the PcgInfo of a pcg solve.  Other backends
    append nothing.
    """
    if isinstance(backend, ConvnetProjection):
        if tape_sink is not None:
            u_new, _, tape = learned_project(backend.params, u, g, tape=True)
            tape_sink.append(tape)
        else:
            u_new, _ = learned_project(backend.params, u, g)
        return u_new
    # the system matrix is the negated Laplacian, so zero post-divergence
    # means solving A p = -div(u)
    d = divergence(u, g)
    sys = make_compatible(PoissonSystem(g, ScalarGrid(g.dims, -d.values)))
    if isinstance(backend, JacobiProjection):
        p = solve_jacobi(sys, backend.iters)
    elif isinstance(backend, PcgProjection):
        p, info = solve_pcg(sys, backend.tol, backend.max_iter)
        if info_sink is not None:
            info_sink.append(info)
    elif isinstance(backend, ExactProjection):
        p = solve_dense_direct(sys)
    else:
        raise TypeError(f"unknown projection backend {backend!r}")
    return subtract_pressure_gradient(u, p, g)


def step(state: SimState, cfg: SimConfig, trace: list | None = None,
         tape_sink: list | None = None,
         info_sink: list | None = None) -> SimState:
    """Advance one frame; the input state is left untouched.

    ``trace``, when given, collects the names of the sub-steps that ran.
    ``tape_sink`` collects the backward tape of a learned projection so a
    training loop can differentiate through it.  ``info_sink`` collects
    the convergence info of a pcg projection.
    """
    def note(name: str) -> None:
        if trace is not None:
            trace.append(name)

    g = state.g
    u, density = state.u, state.density
    if not _all_finite(u, density):
        # advection would chase garbage positions; fail like a blow-up
        raise SimulationError(f"non-finite fields in the input of frame {state.frame + 1}")
    if cfg.inflow:
        u, density = _apply_inflow(u, density, g, cfg.inflow)
        note("inflow")
    density = advect_scalar(density, u, g, cfg.dt, cfg.advection)
    note("advect_density")
    u = self_advect(u, g, cfg.dt, cfg.advection)
    note("advect_velocity")
    u = add_body_force(u, g, cfg.forces.gravity, cfg.dt)
    note("body_force")
    u = add_buoyancy(u, density, g, cfg.forces.buoyancy, cfg.forces.gravity, cfg.dt)
    note("buoyancy")
    u = vorticity_confinement(u, g, cfg.forces.confinement, cfg.dt)
    note("confinement")
    u = enforce_solid_velocities(u, g)
    note("enforce_solids")
    if not isinstance(cfg.projection, NoProjection):
        u = project_velocity(u, g, cfg.projection, tape_sink, info_sink)
        note("project")
        u = enforce_solid_velocities(u, g)
        note("enforce_solids")

    if not _all_finite(u, density):
        msg = f"non-finite fields after frame {state.frame + 1}"
        if cfg.dump_path is not None:
            write_frame(cfg.dump_path, g, u, density, cfg.dt)
            msg += f"; frame dumped to {cfg.dump_path}"
        raise SimulationError(msg)
    return SimState(u, density, g, state.frame + 1, state.time + cfg.dt)


# ====== Metrics and the driver ======

@dataclass(frozen=True)
class FrameMetrics:
    """Per-frame health numbers; divergence stats are over fluid cells."""

    frame: int
    mean_div_l2: float
    std_div_l2: float
    max_div: float
    max_speed: float
    residual: float  # l2 norm of the post-step divergence
    wall_ms: float

    COLUMNS = ("frame", "mean_div_l2", "std_div_l2", "max_div",
               "max_speed", "residual", "wall_ms")

    def row(self) -> list:
        return [self.frame, self.mean_div_l2, self.std_div_l2, self.max_div,
                self.max_speed, self.residual, self.wall_ms]


def frame_metrics(state: SimState, wall_ms: float = 0.0) -> FrameMetrics:
    d = np.abs(divergence(state.u, state.g).values[state.g.fluid])
    if d.size == 0:
        mean = std = mx = l2 = 0.0
    else:
        mean, std = float(d.mean()), float(d.std())
        mx, l2 = float(d.max()), float(np.sqrt(np.sum(d * d)))
    return FrameMetrics(state.frame, mean, std, mx, state.u.max_speed(), l2, wall_ms)


class CsvMetricsSink:
    """Appends one metrics row per frame to a CSV file."""

    def __init__(self, path):
        self._f = open(path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(FrameMetrics.COLUMNS)

    def __call__(self, metrics: FrameMetrics, state: SimState) -> None:
        self._w.writerow([f"{v:.17g}" if isinstance(v, float) else v
                          for v in metrics.row()])

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "CsvMetricsSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class PgmFrameSink:
    """Dumps the density field of every frame as frame_%06d.pgm."""

    def __init__(self, out_dir, vmax: float = 1.0):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.vmax = vmax

    def __call__(self, metrics: FrameMetrics, state: SimState) -> None:
        write_pgm(self.out_dir / f"frame_{state.frame:06d}.pgm",
                  state.density.values, self.vmax)


def run(state: SimState, cfg: SimConfig, frames: int,
        sinks: tuple = ()) -> tuple[SimState, list[FrameMetrics]]:
    """Advance ``frames`` steps, reporting per-frame metrics to the sinks.

    On a simulation blow-up the error propagates after the metrics
    emitted so far; callers keep the partial record.
    """
    if frames < 1:
        raise ValueError(f"need at least one frame, got {frames}")
    metrics: list[FrameMetrics] = []
    for _ in range(frames):
        t0 = time.perf_counter()
        state = step(state, cfg)
        wall = (time.perf_counter() - t0) * 1e3
        m = frame_metrics(state, wall)
        metrics.append(m)
        for sink in sinks:
            sink(m, state)
    return state, metrics


# ====== Canonical scenario ======

def plume_scenario(dims: GridDims, open_top: bool = False,
                   obstacle: str | None = None,
                   inflow_fraction: float = 0.125,
                   inflow_speed: float = 1.0,
                   buoyancy: float = 0.5,
                   confinement: float = 0.0,
                   projection=None,
                   dt: float = 1.0 / 30.0,
                   advection: str = "maccormack") -> tuple[SimState, SimConfig]:
    """Buoyant plume rising from a disc-shaped inlet near the bottom.

    ``inflow_fraction`` is the inlet diameter as a fraction of the domain
    width.  ``obstacle`` places a held-out solid mid-domain: "disc" or
    "box".  Returns the initial state and a ready-to-run configuration.
    """
    if dims.ny % 4 or dims.nx % 4:
        raise ValueError(f"grid sides must be divisible by 4, got {dims.nx}x{dims.ny}")
    solid = np.zeros(dims.shape, dtype=bool)
    if obstacle is not None:
        cx, cy = dims.nx / 2.0, dims.ny / 2.0
        r = dims.nx / 8.0
        ci, cj = np.meshgrid(np.arange(dims.nx) + 0.5, np.arange(dims.ny) + 0.5)
        if obstacle == "disc":
            solid |= (ci - cx) ** 2 + (cj - cy) ** 2 <= r ** 2
        elif obstacle == "box":
            solid |= (np.abs(ci - cx) <= r) & (np.abs(cj - cy) <= r)
        else:
            raise ValueError(f"unknown obstacle {obstacle!r}")
    g = OccupancyGrid(dims, solid, open_top)

    radius = max(1.5, inflow_fraction * dims.nx / 2.0)
    inlet = InflowRegion(center=(dims.nx / 2.0, radius + 1.5), radius=radius,
                         velocity=(0.0, inflow_speed), density=1.0)
    cfg = SimConfig(
        dt=dt,
        advection=advection,
        forces=ForceConfig(buoyancy=buoyancy, confinement=confinement),
        projection=projection if projection is not None else PcgProjection(),
        inflow=(inlet,),
    )
    state = SimState(MacVelocity.zeros(dims), ScalarGrid.zeros(dims), g)
    return state, cfg
