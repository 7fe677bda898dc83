"""Gaussian random forcing supported on an annulus in Fourier space."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .fieldcore import (
    FieldError,
    Grid2D,
    RealField,
    SpectralField,
    mirror_hermitian,
    parseval_energy,
    spectral_derivative,
    transform_inverse,
)


@dataclass(frozen=True)
class ForcingSpec:
    """Annulus forcing parameters.

    ``k_center`` and ``half_width`` are in mode-number units (multiples of
    ``2*pi/length``).  ``amplitude`` is the rms of the vorticity forcing
    ``f_omega`` produced by :func:`make_forcing`; :func:`sample_annulus_scalar`
    uses it as the rms of the scalar itself.
    """

    k_center: float = 20.0
    half_width: float = 1.5
    amplitude: float = 1.0
    refresh: str = "every-step"
    seed_stream: str = "forcing"

    def validate(self, grid: Grid2D) -> None:
        if not self.k_center - self.half_width > 0:
            raise FieldError("annulus must exclude k = 0 (k_center - half_width > 0)")
        cutoff = grid.n / 3
        if not self.k_center + self.half_width < cutoff:
            raise FieldError(
                f"annulus outer edge {self.k_center + self.half_width} must stay below "
                f"the dealiasing cutoff {cutoff:.3f} for n={grid.n}"
            )
        if not self.amplitude > 0:
            raise FieldError("forcing amplitude must be positive")
        if self.refresh != "every-step":
            raise FieldError(f"unsupported refresh mode {self.refresh!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=32)
def annulus_index(grid: Grid2D, k_lo: float, k_hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Half-plane indices of modes with ``k_lo <= |m| <= k_hi``.

    Modes on the self-conjugate columns are kept only for ``my > 0``; their
    partners are filled by Hermitian mirroring.
    """
    wn = grid.wavenumbers
    mag = wn.mode_magnitude
    sel = (mag >= k_lo) & (mag <= k_hi)
    n = grid.n
    for c in (0, n // 2) if n % 2 == 0 else (0,):
        sel[:, c] &= wn.my[:, c] > 0
    rows, cols = np.nonzero(sel)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def _unit_annulus(spec: ForcingSpec, grid: Grid2D, rng: np.random.Generator) -> np.ndarray:
    """Hermitian annulus coefficients, normalized to unit real-space rms."""
    rows, cols = annulus_index(grid, spec.k_center - spec.half_width, spec.k_center + spec.half_width)
    if rows.size == 0:
        raise FieldError(
            f"annulus [{spec.k_center - spec.half_width}, {spec.k_center + spec.half_width}] "
            f"contains no modes on n={grid.n}"
        )
    z = rng.standard_normal((2, rows.size))
    coeffs = np.zeros(grid.spectral_shape, dtype=np.complex128)
    coeffs[rows, cols] = z[0] + 1j * z[1]
    coeffs = mirror_hermitian(coeffs)
    rms = np.sqrt(parseval_energy(SpectralField(grid, coeffs))) / grid.n
    return coeffs / rms


def sample_annulus_scalar(
    spec: ForcingSpec, grid: Grid2D, rng: np.random.Generator, rms: float | None = None
) -> SpectralField:
    """Random scalar with spectral support in the annulus and real-space rms
    ``rms`` (default ``spec.amplitude``)."""
    spec.validate(grid)
    target = spec.amplitude if rms is None else rms
    return SpectralField(grid, target * _unit_annulus(spec, grid, rng))


@dataclass(eq=False)
class Forcing:
    """One forcing draw: scalar potential ``phi``, divergence-free vector
    ``(fx, fy) = (-d_y phi, d_x phi)`` and its curl ``f_omega = lap(phi)``."""

    phi_hat: SpectralField
    f_omega_hat: SpectralField

    @property
    def grid(self) -> Grid2D:
        return self.phi_hat.grid

    def vector_hat(self) -> tuple[SpectralField, SpectralField]:
        fx = spectral_derivative(self.phi_hat, "y", 1)
        fy = spectral_derivative(self.phi_hat, "x", 1)
        return SpectralField(self.grid, -fx.coeffs), fy

    def vector(self) -> tuple[RealField, RealField]:
        fx, fy = self.vector_hat()
        return transform_inverse(fx), transform_inverse(fy)

    def f_omega(self) -> RealField:
        return transform_inverse(self.f_omega_hat)


def make_forcing(spec: ForcingSpec, grid: Grid2D, rng: np.random.Generator) -> Forcing:
    """Draw a forcing whose vorticity source has rms ``spec.amplitude``.

    ``f_omega = d_x f_y - d_y f_x = lap(phi)``; both the vector and scalar
    forms come from the same draw.
    """
    spec.validate(grid)
    shape = _unit_annulus(spec, grid, rng)
    lap = spectral_derivative(SpectralField(grid, shape), None, 2).coeffs
    lap_rms = np.sqrt(parseval_energy(SpectralField(grid, lap))) / grid.n
    scale = spec.amplitude / lap_rms
    return Forcing(SpectralField(grid, shape * scale), SpectralField(grid, lap * scale))
