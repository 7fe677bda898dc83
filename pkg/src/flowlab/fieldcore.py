"""Periodic 2D grids, real-to-complex transforms, spectral calculus and the
``FLOW1`` field file format.

Conventions used everywhere in the package:

* arrays are indexed ``[iy, ix]`` (row = y, column = x), row-major;
* the forward transform is unnormalized (``numpy.fft.rfft2``), the inverse
  divides by ``n**2``, so that ``sum(f**2) == sum_k |F_k|**2 / n**2`` when the
  half-plane is expanded to the full plane;
* spectral fields live on the ``rfft2`` half-plane of shape ``(n, n//2 + 1)``.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MAGIC = b"FLOW1\n"


class FieldError(ValueError):
    """Raised for invalid fields, spectra or field files."""


@dataclass(frozen=True)
class Grid2D:
    """Square periodic grid with ``n`` samples per side over ``[0, length)``."""

    n: int
    length: float = 2 * np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise FieldError(f"grid needs integer n >= 8, got {self.n!r}")
        if not self.length > 0:
            raise FieldError(f"grid length must be positive, got {self.length!r}")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid ``(x, y)`` of sample positions, each of shape ``(n, n)``."""
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, indexing="xy")

    @cached_property
    def wavenumbers(self) -> "WaveNumbers":
        return WaveNumbers.for_grid(self)


@dataclass(frozen=True, eq=False)
class WaveNumbers:
    """Wave-vector lookup tables on the half-plane.

    ``mx``/``my`` are integer mode numbers; ``kx``/``ky`` carry the physical
    factor ``2*pi/length``.
    """

    mx: np.ndarray
    my: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    k2: np.ndarray
    k4: np.ndarray

    @classmethod
    def for_grid(cls, grid: Grid2D) -> "WaveNumbers":
        n = grid.n
        m_full = np.fft.fftfreq(n, 1.0 / n)
        # Nyquist stored as -n/2 so all modes lie in [-n/2, n/2)
        m_half = np.arange(n // 2 + 1, dtype=float)
        if n % 2 == 0:
            m_half[-1] = -n / 2
        my, mx = np.meshgrid(m_full, m_half, indexing="ij")
        scale = 2 * np.pi / grid.length
        kx, ky = mx * scale, my * scale
        k2 = kx**2 + ky**2
        arrays = dict(mx=mx, my=my, kx=kx, ky=ky, k2=k2, k4=k2 * k2)
        for a in arrays.values():
            a.setflags(write=False)
        return cls(**arrays)

    @cached_property
    def mode_magnitude(self) -> np.ndarray:
        """``|m|`` in mode-number units."""
        return np.hypot(self.mx, self.my)


@dataclass(eq=False)
class RealField:
    """Real samples on a grid, shape ``(n, n)``."""

    grid: Grid2D
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.grid.n, self.grid.n):
            raise FieldError(
                f"data shape {self.data.shape} does not match grid n={self.grid.n}"
            )
        if not np.all(np.isfinite(self.data)):
            raise FieldError("field contains non-finite values")


@dataclass(eq=False)
class SpectralField:
    """Half-plane Fourier coefficients, shape ``(n, n//2 + 1)``."""

    grid: Grid2D
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != self.grid.spectral_shape:
            raise FieldError(
                f"coefficient shape {self.coeffs.shape} does not match "
                f"{self.grid.spectral_shape}"
            )


def self_conjugate_columns(n: int) -> list[int]:
    """Half-plane columns whose coefficients pair with modes in the same column."""
    cols = [0]
    if n % 2 == 0:
        cols.append(n // 2)
    return cols


def hermitian_residual(coeffs: np.ndarray) -> float:
    """Largest violation of ``F(-k) = conj(F(k))`` on the self-conjugate columns,
    relative to the largest coefficient magnitude."""
    n = coeffs.shape[0]
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0:
        return 0.0
    worst = 0.0
    for c in self_conjugate_columns(n):
        col = coeffs[:, c]
        mirrored = np.conj(col[(-np.arange(n)) % n])
        worst = max(worst, float(np.max(np.abs(col - mirrored))))
    return worst / scale


def enforce_hermitian(coeffs: np.ndarray) -> np.ndarray:
    """Project half-plane coefficients onto the Hermitian-consistent subspace.

    Only the ``kx = 0`` and (even ``n``) Nyquist columns carry redundant
    information; for those the pair ``(k, -k)`` is replaced by its Hermitian
    average, which makes self-conjugate modes real.
    """
    out = np.array(coeffs, dtype=np.complex128, copy=True)
    n = out.shape[0]
    idx = (-np.arange(n)) % n
    for c in self_conjugate_columns(n):
        col = out[:, c]
        out[:, c] = 0.5 * (col + np.conj(col[idx]))
    return out


def mirror_hermitian(coeffs: np.ndarray) -> np.ndarray:
    """Make independent half-plane draws Hermitian-consistent.

    On each self-conjugate column the rows ``1 .. n/2-1`` are kept and copied
    (conjugated) onto rows ``-1 .. -(n/2-1)``; self-conjugate modes keep their
    real part.  Unlike :func:`enforce_hermitian` this preserves the variance of
    independently drawn coefficients.
    """
    out = np.array(coeffs, dtype=np.complex128, copy=True)
    n = out.shape[0]
    upper = np.arange(1, (n + 1) // 2)
    for c in self_conjugate_columns(n):
        out[n - upper, c] = np.conj(out[upper, c])
        out[0, c] = out[0, c].real
        if n % 2 == 0:
            out[n // 2, c] = out[n // 2, c].real
    return out


def transform_forward(f: RealField) -> SpectralField:
    if not np.all(np.isfinite(f.data)):
        raise FieldError("cannot transform a field with non-finite values")
    return SpectralField(f.grid, np.fft.rfft2(f.data))


def transform_inverse(F: SpectralField, tol: float = 1e-10) -> RealField:
    residual = hermitian_residual(F.coeffs)
    if residual > tol:
        raise FieldError(f"coefficients violate Hermitian symmetry (residual {residual:.3e})")
    n = F.grid.n
    return RealField(F.grid, np.fft.irfft2(F.coeffs, s=(n, n)))


def parseval_energy(F: SpectralField) -> float:
    """``sum_x f(x)**2`` evaluated from half-plane coefficients."""
    n = F.grid.n
    weights = half_plane_weights(n)
    return float(np.sum(weights * np.abs(F.coeffs) ** 2) / n**2)


def half_plane_weights(n: int) -> np.ndarray:
    """Multiplicity of each half-plane column when expanded to the full plane."""
    w = np.full(n // 2 + 1, 2.0)
    for c in self_conjugate_columns(n):
        w[c] = 1.0
    return np.broadcast_to(w, (n, n // 2 + 1))


def spectral_derivative(F: SpectralField, axis: str | None = None, order: int = 1) -> SpectralField:
    """Differentiate in Fourier space.

    ``axis`` is ``"x"`` or ``"y"`` for ``order`` 1 or 2 (multiplication by
    ``(i k_axis)**order``).  With ``axis=None``, ``order=2`` is the Laplacian
    (``-|k|^2``) and ``order=4`` the biharmonic operator (``|k|^4``).
    """
    wn = F.grid.wavenumbers
    if axis is None:
        if order == 2:
            symbol = -wn.k2
        elif order == 4:
            symbol = wn.k4
        else:
            raise FieldError(f"unsupported isotropic derivative order {order}")
    elif axis in ("x", "y"):
        if order not in (1, 2, 4):
            raise FieldError(f"unsupported derivative order {order}")
        k = wn.kx if axis == "x" else wn.ky
        symbol = (1j * k) ** order
        if order % 2 == 1:
            # the Nyquist mode has no odd derivative on a real grid
            symbol = np.where(nyquist_mask(F.grid, axis), 0.0, symbol)
    else:
        raise FieldError(f"unknown axis {axis!r}")
    return SpectralField(F.grid, F.coeffs * symbol)


def nyquist_mask(grid: Grid2D, axis: str) -> np.ndarray:
    wn = grid.wavenumbers
    m = wn.mx if axis == "x" else wn.my
    if grid.n % 2:
        return np.zeros_like(m, dtype=bool)
    return m == -grid.n / 2


def dealias_mask(grid: Grid2D) -> np.ndarray:
    """True where a mode survives the 2/3 rule: ``max(|mx|, |my|) <= n/3``."""
    wn = grid.wavenumbers
    cutoff = (2.0 / 3.0) * (grid.n / 2)
    return np.maximum(np.abs(wn.mx), np.abs(wn.my)) <= cutoff


def dealias(F: SpectralField) -> SpectralField:
    return SpectralField(F.grid, np.where(dealias_mask(F.grid), F.coeffs, 0.0))


# --- FLOW1 files -----------------------------------------------------------


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def save_field(f: RealField, path: str | os.PathLike) -> None:
    header = {
        "n": f.grid.n,
        "length": f.grid.length,
        "dtype": "<f8",
        "metadata": f.metadata,
    }
    line = json.dumps(header, sort_keys=True, default=_jsonable).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(line + b"\n")
    buf.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_field(path: str | os.PathLike) -> RealField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise FieldError(f"{path}: bad magic, not a FLOW1 file")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise FieldError(f"{path}: missing header line")
    try:
        header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldError(f"{path}: corrupt header ({exc})") from None
    if header.get("dtype") != "<f8":
        raise FieldError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    n = int(header["n"])
    payload = raw[end + 1:]
    if len(payload) != 8 * n * n:
        raise FieldError(
            f"{path}: payload has {len(payload)} bytes, expected {8 * n * n} for n={n}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(n, n).astype(np.float64)
    return RealField(Grid2D(n, float(header["length"])), data, dict(header.get("metadata", {})))


def field_io_roundtrip(f: RealField, path: str | os.PathLike) -> RealField:
    save_field(f, path)
    return load_field(path)
