"""Weakly compressible (2+1)-dimensional conformal fluid.

Evolves the conserved densities ``E = T^00`` and ``S^i = T^0i`` of

    T^{mu nu} = rho/2 (eta^{mu nu} + 3 u^mu u^nu),   rho = 2 p,   c = 1,

    d_t E   + d_i S^i                          = -nu lap^2 E
    d_t S^i + d_j (S^j v^i + rho/2 delta^ij)   = -nu lap^2 S^i + f^i

with fourth-order centered differences for the fluxes, the squared
five-point Laplacian for ``lap^2`` and SSP-RK3 in time.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .fieldcore import Grid2D, RealField, save_field
from .forcing import ForcingSpec, make_forcing
from .incompressible import SimulationError, SimulationResult, Snapshot, _snapshot_metadata
from .spectra import energy_spectrum, write_spectra_csv

log = logging.getLogger(__name__)


class RecoveryError(SimulationError):
    """Conserved state with ``9 E^2 <= 8 |S|^2`` (no physical primitives)."""


@dataclass
class PrimitiveState:
    rho: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    @property
    def v2(self) -> np.ndarray:
        return self.vx**2 + self.vy**2

    @property
    def lorentz2(self) -> np.ndarray:
        return 1.0 / (1.0 - self.v2)


@dataclass
class ConservedState:
    E: np.ndarray
    Sx: np.ndarray
    Sy: np.ndarray
    t: float = 0.0
    step_count: int = 0

    def copy_with(self, E, Sx, Sy) -> "ConservedState":
        return ConservedState(E, Sx, Sy, self.t, self.step_count)

    def totals(self) -> tuple[float, float, float]:
        return float(self.E.sum()), float(self.Sx.sum()), float(self.Sy.sum())


def primitives_to_conserved(p: PrimitiveState) -> ConservedState:
    rho = np.asarray(p.rho, dtype=np.float64)
    v2 = p.vx**2 + p.vy**2
    if np.any(v2 >= 1.0):
        raise ValueError("superluminal velocity: |v| must be < 1")
    if np.any(rho <= 0):
        raise ValueError("energy density must be positive")
    g2 = 1.0 / (1.0 - v2)
    E = 0.5 * rho * (3.0 * g2 - 1.0)
    w = 1.5 * rho * g2
    return ConservedState(E, w * p.vx, w * p.vy)


def conserved_to_primitives(c: ConservedState) -> PrimitiveState:
    """Closed-form recovery.

    ``|S|/E = 3v / (2 + v^2)`` gives ``s v^2 - 3 E v + 2 s = 0``; the causal
    root ``v = (3E - sqrt(9E^2 - 8s^2)) / (2s)`` is evaluated in the
    rationalized form ``4s / (3E + sqrt(9E^2 - 8s^2))``, which has no
    cancellation for small ``s`` and equals 0 at ``s = 0``.
    """
    E, Sx, Sy = c.E, c.Sx, c.Sy
    s2 = Sx**2 + Sy**2
    disc = 9.0 * E**2 - 8.0 * s2
    bad = ~(disc > 0) | ~(E > 0)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        loc = tuple(int(i) for i in idx)
        raise RecoveryError(
            f"unphysical conserved state at {loc}: E={np.asarray(E)[loc]!r}, "
            f"|S|^2={np.asarray(s2)[loc]!r} (need 9E^2 > 8|S|^2 and E > 0)"
        )
    s = np.sqrt(s2)
    v = 4.0 * s / (3.0 * E + np.sqrt(disc))
    v = np.where(s < 1e-14 * E, 0.0, v)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(s > 0, v / s, 0.0)
    vx, vy = Sx * ratio, Sy * ratio
    v2 = v * v
    rho = 2.0 * E * (1.0 - v2) / (2.0 + v2)
    return PrimitiveState(rho, vx, vy)


# --- stencils ---------------------------------------------------------------
# arrays are indexed [iy, ix]; axis 1 is x, axis 0 is y


def ddx4(f: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """Fourth-order centered first derivative with periodic wrap."""
    return (
        8.0 * (np.roll(f, -1, axis) - np.roll(f, 1, axis))
        - (np.roll(f, -2, axis) - np.roll(f, 2, axis))
    ) / (12.0 * dx)


def laplacian5(f: np.ndarray, dx: float) -> np.ndarray:
    return (
        np.roll(f, 1, 0) + np.roll(f, -1, 0) + np.roll(f, 1, 1) + np.roll(f, -1, 1) - 4.0 * f
    ) / dx**2


def biharmonic(f: np.ndarray, dx: float) -> np.ndarray:
    return laplacian5(laplacian5(f, dx), dx)


@dataclass
class CompressibleConfig:
    n: int = 128
    # grid units (dx = 1) by default, the scale in which nu ~ 0.01 - 0.05
    length: float | None = None
    nu: float = 0.03
    dt: float | None = None
    cfl: float = 0.4
    forcing: ForcingSpec = field(default_factory=lambda: ForcingSpec(14.0, 1.5, 0.007))
    t_end: float = 3600.0
    snapshot_stride: int = 40
    seed: int = 0
    sim_id: str = "comp-0"
    forced: bool = True

    def __post_init__(self):
        if isinstance(self.forcing, dict):
            self.forcing = ForcingSpec(**self.forcing)
        if self.length is None:
            self.length = float(self.n)
        if not self.nu >= 0:
            # nu = 0 is allowed for conservation checks
            raise ValueError("nu must be non-negative")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("CFL number must lie in (0, 0.5]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.n, self.length)

    @property
    def time_step(self) -> float:
        """Fixed step; without an explicit ``dt`` it assumes ``|v| <= 0.5``."""
        if self.dt is not None:
            return self.dt
        return self.cfl * self.grid.dx / 1.5

    def to_dict(self) -> dict:
        return asdict(self)


def rhs(
    c: ConservedState,
    dx: float,
    nu: float,
    forcing: tuple[np.ndarray, np.ndarray] | None = None,
    prim: PrimitiveState | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time derivatives ``(dE/dt, dSx/dt, dSy/dt)``."""
    p = conserved_to_primitives(c) if prim is None else prim
    half_rho = 0.5 * p.rho
    dE = -(ddx4(c.Sx, dx, 1) + ddx4(c.Sy, dx, 0))
    dSx = -(ddx4(c.Sx * p.vx + half_rho, dx, 1) + ddx4(c.Sy * p.vx, dx, 0))
    dSy = -(ddx4(c.Sx * p.vy, dx, 1) + ddx4(c.Sy * p.vy + half_rho, dx, 0))
    if nu:
        dE -= nu * biharmonic(c.E, dx)
        dSx -= nu * biharmonic(c.Sx, dx)
        dSy -= nu * biharmonic(c.Sy, dx)
    if forcing is not None:
        dSx += forcing[0]
        dSy += forcing[1]
    return dE, dSx, dSy


def step_rk3(
    c: ConservedState,
    config: CompressibleConfig,
    rng: np.random.Generator | None = None,
    dt: float | None = None,
) -> ConservedState:
    """One SSP-RK3 step; the forcing draw is shared by the three stages."""
    dt = config.time_step if dt is None else dt
    dx = config.grid.dx
    p0 = conserved_to_primitives(c)
    vmax = float(np.sqrt(np.max(p0.v2)))
    if dt * (vmax + 1.0) / dx > 0.5:
        raise SimulationError(
            f"CFL violated at t={c.t:.4f}: dt*(max|v|+1)/dx = {dt * (vmax + 1.0) / dx:.3f} > 0.5"
        )
    f = None
    if config.forced:
        if rng is None:
            raise ValueError("a forced step needs a random generator")
        fx, fy = make_forcing(config.forcing, config.grid, rng).vector()
        f = (fx.data, fy.data)
    nu = config.nu

    k1 = rhs(c, dx, nu, f, p0)
    u1 = c.copy_with(c.E + dt * k1[0], c.Sx + dt * k1[1], c.Sy + dt * k1[2])
    k2 = rhs(u1, dx, nu, f)
    u2 = c.copy_with(
        0.75 * c.E + 0.25 * (u1.E + dt * k2[0]),
        0.75 * c.Sx + 0.25 * (u1.Sx + dt * k2[1]),
        0.75 * c.Sy + 0.25 * (u1.Sy + dt * k2[2]),
    )
    k3 = rhs(u2, dx, nu, f)
    E = c.E / 3.0 + 2.0 / 3.0 * (u2.E + dt * k3[0])
    Sx = c.Sx / 3.0 + 2.0 / 3.0 * (u2.Sx + dt * k3[1])
    Sy = c.Sy / 3.0 + 2.0 / 3.0 * (u2.Sy + dt * k3[2])
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(Sx)) and np.all(np.isfinite(Sy))):
        raise SimulationError(f"non-finite state after step at t={c.t:.4f}")
    out = ConservedState(E, Sx, Sy, round(c.t + dt, 12), c.step_count + 1)
    conserved_to_primitives(out)  # raises RecoveryError on unphysical output
    return out


def at_rest(grid: Grid2D, rho: float = 1.0) -> ConservedState:
    shape = (grid.n, grid.n)
    return primitives_to_conserved(PrimitiveState(np.full(shape, rho), np.zeros(shape), np.zeros(shape)))


def vorticity_fd(vx: np.ndarray, vy: np.ndarray, dx: float) -> np.ndarray:
    """``d_x v_y - d_y v_x`` with the solver's fourth-order stencil."""
    return ddx4(vy, dx, 1) - ddx4(vx, dx, 0)


def snapshot_fields(c: ConservedState, grid: Grid2D) -> dict[str, RealField]:
    p = conserved_to_primitives(c)
    return {
        "rho": RealField(grid, p.rho),
        "vx": RealField(grid, p.vx),
        "vy": RealField(grid, p.vy),
        "omega": RealField(grid, vorticity_fd(p.vx, p.vy, grid.dx)),
    }


def run_simulation(
    config: CompressibleConfig,
    out_dir: str | os.PathLike | None = None,
    fields: tuple[str, ...] = ("rho", "vx", "vy", "omega"),
    initial: ConservedState | None = None,
) -> SimulationResult:
    """Integrate from ``(rho, v) = (1, 0)`` (or ``initial``) to ``t_end``.

    Snapshots every ``snapshot_stride`` steps, including ``t = 0``.  The
    forcing stream is ``rng.stream(seed, "compressible", sim_id)``.
    """
    grid = config.grid
    config.forcing.validate(grid)
    gen = rngmod.stream(config.seed, "compressible", config.sim_id)
    state = initial if initial is not None else at_rest(grid)
    dt = config.time_step
    n_steps = int(round(config.t_end / dt))
    snaps: list[Snapshot] = []

    def record(s: ConservedState):
        all_fields = snapshot_fields(s, grid)
        spec = energy_spectrum(all_fields["vx"], all_fields["vy"])
        snaps.append(Snapshot(s.t, s.step_count, {k: all_fields[k] for k in fields}, spec))

    record(state)
    for i in range(1, n_steps + 1):
        try:
            state = step_rk3(state, config, gen, dt)
        except SimulationError:
            if out_dir is not None:
                _dump_failure(state, config, out_dir)
            raise
        if i % config.snapshot_stride == 0:
            record(state)
    result = SimulationResult(config.sim_id, config.to_dict(), snaps)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for snap in snaps:
            for name, f in snap.fields.items():
                meta = _snapshot_metadata(config, snap.t, snap.step, name)
                save_field(RealField(grid, f.data, meta), out / f"{name}_{snap.step:07d}.flow")
        write_spectra_csv(out / "spectra.csv", result.times, result.spectra)
    return result


def _dump_failure(state: ConservedState, config: CompressibleConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = config.grid
    for name, data in (("E", state.E), ("Sx", state.Sx), ("Sy", state.Sy)):
        meta = _snapshot_metadata(config, state.t, state.step_count, name)
        meta["failure"] = True
        if np.all(np.isfinite(data)):
            save_field(RealField(grid, data, meta), out / f"failure_{name}.flow")
