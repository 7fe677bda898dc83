"""Pseudo-spectral solver for the forced 2D vorticity equation

    d_t omega = -nu * lap^2 omega - (v . grad) omega + f_omega

with the hyperviscous term advanced by Crank-Nicolson and the advection term
by second-order Adams-Bashforth (explicit Euler on the first step).
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .fieldcore import (
    FieldError,
    Grid2D,
    RealField,
    SpectralField,
    dealias_mask,
    save_field,
)
from .forcing import ForcingSpec, make_forcing
from .spectra import EnergySpectrum, energy_spectrum_from_vorticity, write_spectra_csv

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when a run blows up or violates its stability limits."""


@dataclass
class IncompressibleConfig:
    """Run parameters.  The defaults are the desk-scale training setting
    (128^2, k_f = 20) tuned to show chaos, a -5/3 range and, for long runs,
    the low-k condensate before the CFL limit is reached."""

    n: int = 128
    length: float = 2 * math.pi
    nu: float = 3e-6
    p: int = 2
    alpha: float = 0.0
    dt: float = 0.005
    forcing: ForcingSpec = field(default_factory=lambda: ForcingSpec(20.0, 1.5, 56.6))
    t_end: float = 70.0
    snapshot_stride: int = 20
    seed: int = 0
    sim_id: str = "inc-0"
    cfl_max: float = 0.5
    forced: bool = True

    def __post_init__(self):
        if isinstance(self.forcing, dict):
            self.forcing = ForcingSpec(**self.forcing)
        if not self.nu >= 0:
            raise ValueError("nu must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.p != 2:
            raise ValueError("only hyperviscosity order p=2 is supported")
        if self.alpha != 0:
            raise ValueError("linear friction is not supported (alpha must be 0)")

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.n, self.length)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IncompressibleState:
    omega_hat: SpectralField
    t: float = 0.0
    step_count: int = 0
    # advection term of the previous step, for Adams-Bashforth
    prev_nonlinear: np.ndarray | None = None

    @property
    def grid(self) -> Grid2D:
        return self.omega_hat.grid

    @classmethod
    def at_rest(cls, grid: Grid2D) -> "IncompressibleState":
        return cls(SpectralField(grid, np.zeros(grid.spectral_shape, dtype=np.complex128)))

    @classmethod
    def from_vorticity(cls, omega: RealField) -> "IncompressibleState":
        coeffs = np.fft.rfft2(omega.data) * dealias_mask(omega.grid)
        coeffs[0, 0] = 0.0
        return cls(SpectralField(omega.grid, coeffs))

    def vorticity(self) -> RealField:
        n = self.grid.n
        return RealField(self.grid, np.fft.irfft2(self.omega_hat.coeffs, s=(n, n)))


def _streamfunction_hat(omega_hat: np.ndarray, grid: Grid2D) -> np.ndarray:
    k2 = grid.wavenumbers.k2
    psi = np.zeros_like(omega_hat)
    nz = k2 > 0
    psi[nz] = omega_hat[nz] / k2[nz]
    return psi


def velocity_hat(omega_hat: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """``(vx_hat, vy_hat)`` with ``v = (d_y psi, -d_x psi)``, ``lap psi = -omega``."""
    grid = omega_hat.grid
    wn = grid.wavenumbers
    psi = _streamfunction_hat(omega_hat.coeffs, grid)
    return 1j * wn.ky * psi, -1j * wn.kx * psi


def velocity_from_vorticity(omega_hat: SpectralField, tol: float = 1e-12) -> tuple[RealField, RealField]:
    """Velocity of a zero-mean vorticity field.

    The fixed convention is ``omega = d_x v_y - d_y v_x`` and ``div v = 0``.
    """
    grid = omega_hat.grid
    n = grid.n
    scale = max(float(np.max(np.abs(omega_hat.coeffs))), 1.0)
    if abs(omega_hat.coeffs[0, 0]) / n**2 > tol * scale:
        raise FieldError("vorticity has nonzero mean; no periodic velocity exists")
    vx, vy = velocity_hat(omega_hat)
    return (
        RealField(grid, np.fft.irfft2(vx, s=(n, n))),
        RealField(grid, np.fft.irfft2(vy, s=(n, n))),
    )


def _advection(omega_hat: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, float]:
    """Dealiased ``-(v . grad) omega`` in spectral space, plus ``max|v|``."""
    n = grid.n
    wn = grid.wavenumbers
    psi = _streamfunction_hat(omega_hat, grid)
    s = (n, n)
    vx = np.fft.irfft2(1j * wn.ky * psi, s=s)
    vy = np.fft.irfft2(-1j * wn.kx * psi, s=s)
    wx = np.fft.irfft2(1j * wn.kx * omega_hat, s=s)
    wy = np.fft.irfft2(1j * wn.ky * omega_hat, s=s)
    out = -np.fft.rfft2(vx * wx + vy * wy)
    out *= dealias_mask(grid)
    # the advection term is a divergence, so its mean is exactly zero
    out[0, 0] = 0.0
    vmax = float(np.sqrt(np.max(vx * vx + vy * vy)))
    return out, vmax


def nonlinear_term(omega_hat: SpectralField) -> SpectralField:
    """Pseudo-spectral ``-(v . grad) omega``, dealiased by the 2/3 rule."""
    return SpectralField(omega_hat.grid, _advection(omega_hat.coeffs, omega_hat.grid)[0])


def step(
    state: IncompressibleState,
    config: IncompressibleConfig,
    rng: np.random.Generator | None = None,
) -> IncompressibleState:
    """Advance one time step (CN for hyperviscosity, AB2 for advection)."""
    grid = state.grid
    dt = config.dt
    w = state.omega_hat.coeffs
    nl, vmax = _advection(w, grid)
    cfl = dt * vmax / grid.dx
    if cfl > config.cfl_max:
        raise SimulationError(
            f"CFL {cfl:.3f} exceeds {config.cfl_max} at t={state.t:.4f} (max|v|={vmax:.3e})"
        )
    if state.prev_nonlinear is None:
        explicit = nl
    else:
        explicit = 1.5 * nl - 0.5 * state.prev_nonlinear
    lin = config.nu * grid.wavenumbers.k4
    rhs = (1.0 - 0.5 * dt * lin) * w + dt * explicit
    if config.forced:
        if rng is None:
            raise ValueError("a forced step needs a random generator")
        rhs = rhs + dt * make_forcing(config.forcing, grid, rng).f_omega_hat.coeffs
    new = rhs / (1.0 + 0.5 * dt * lin)
    new *= dealias_mask(grid)
    new[0, 0] = 0.0
    if not np.all(np.isfinite(new)):
        raise SimulationError(f"non-finite vorticity after step at t={state.t:.4f}")
    # rounding keeps snapshot times free of accumulated float drift
    t_new = round(state.t + dt, 12)
    return IncompressibleState(SpectralField(grid, new), t_new, state.step_count + 1, nl)


def enstrophy(state: IncompressibleState) -> float:
    """Mean of ``omega**2 / 2`` over the grid."""
    return 0.5 * float(np.mean(state.vorticity().data ** 2))


def kinetic_energy(state: IncompressibleState) -> float:
    return energy_spectrum_from_vorticity(state.omega_hat.coeffs, state.grid).total


@dataclass
class Snapshot:
    t: float
    step: int
    fields: dict[str, RealField]
    spectrum: EnergySpectrum


@dataclass
class SimulationResult:
    sim_id: str
    config: dict
    snapshots: list[Snapshot]

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]

    @property
    def spectra(self) -> list[EnergySpectrum]:
        return [s.spectrum for s in self.snapshots]


def _snapshot_metadata(config, t: float, step_no: int, name: str) -> dict:
    return {
        "sim_id": config.sim_id,
        "t": t,
        "step": step_no,
        "field": name,
        "dynamics": "incompressible" if isinstance(config, IncompressibleConfig) else "compressible",
        "k_forcing": config.forcing.k_center,
        "nu": config.nu,
        "forcing_amplitude": config.forcing.amplitude,
        "seed": config.seed,
    }


def write_snapshots(result: SimulationResult, out_dir: str | os.PathLike, config) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for snap in result.snapshots:
        for name, f in snap.fields.items():
            meta = _snapshot_metadata(config, snap.t, snap.step, name)
            save_field(RealField(f.grid, f.data, meta), out / f"{name}_{snap.step:07d}.flow")
    write_spectra_csv(out / "spectra.csv", result.times, result.spectra)


def run_simulation(
    config: IncompressibleConfig,
    out_dir: str | os.PathLike | None = None,
    fields: tuple[str, ...] = ("omega",),
    initial: IncompressibleState | None = None,
) -> SimulationResult:
    """Integrate from rest (or ``initial``) to ``t_end``, recording
    snapshots every ``snapshot_stride`` steps including ``t = 0``.

    The forcing stream is ``rng.stream(seed, "incompressible", sim_id)``.
    """
    grid = config.grid
    config.forcing.validate(grid)
    gen = rngmod.stream(config.seed, "incompressible", config.sim_id)
    state = initial if initial is not None else IncompressibleState.at_rest(grid)
    n_steps = int(round(config.t_end / config.dt))
    snaps: list[Snapshot] = []

    def record(s: IncompressibleState):
        data = {}
        if "omega" in fields:
            data["omega"] = s.vorticity()
        if "vx" in fields or "vy" in fields:
            vx, vy = velocity_from_vorticity(s.omega_hat)
            data.update({"vx": vx, "vy": vy})
        data = {k: v for k, v in data.items() if k in fields}
        snaps.append(Snapshot(s.t, s.step_count, data, energy_spectrum_from_vorticity(s.omega_hat.coeffs, grid)))

    record(state)
    for i in range(1, n_steps + 1):
        try:
            state = step(state, config, gen)
        except SimulationError:
            if out_dir is not None:
                _dump_failure(state, config, out_dir)
            raise
        if i % config.snapshot_stride == 0:
            record(state)
    result = SimulationResult(config.sim_id, config.to_dict(), snaps)
    if out_dir is not None:
        write_snapshots(result, out_dir, config)
    return result


def _dump_failure(state: IncompressibleState, config, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _snapshot_metadata(config, state.t, state.step_count, "omega")
    meta["failure"] = True
    save_field(RealField(state.grid, state.vorticity().data, meta), out / "failure_omega.flow")
