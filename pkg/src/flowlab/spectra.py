"""Spectral and statistical diagnostics: shell spectra, power-law fits,
structure functions, PDFs and the chaotic/turbulent snapshot labeler."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .fieldcore import FieldError, Grid2D, RealField, half_plane_weights

log = logging.getLogger(__name__)

CHAOTIC = "chaotic"
TURBULENT = "turbulent"
DISCARD = "discard"


@dataclass
class EnergySpectrum:
    """Shell-binned spectrum; shell ``k`` collects modes with ``|m|`` in
    ``[k - 1/2, k + 1/2)`` (mode-number units)."""

    shells: np.ndarray
    E: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.E))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "E"])
            for k, e in zip(self.shells, self.E):
                w.writerow([int(k), repr(float(e))])


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    band: tuple[float, float]
    r2: float
    n_shells: int


@dataclass
class StructureFunctions:
    orders: list[int]
    separations: np.ndarray
    values: np.ndarray  # (len(orders), len(separations))
    exponents: dict[int, float] = field(default_factory=dict)


def shell_index(grid: Grid2D) -> np.ndarray:
    return np.floor(grid.wavenumbers.mode_magnitude + 0.5).astype(np.int64)


def _shell_sum(grid: Grid2D, power: np.ndarray) -> EnergySpectrum:
    idx = shell_index(grid).ravel()
    w = half_plane_weights(grid.n).ravel()
    E = np.bincount(idx, weights=(w * power.ravel()))
    return EnergySpectrum(np.arange(E.size), E)


def energy_spectrum(vx: RealField, vy: RealField) -> EnergySpectrum:
    """Shell spectrum whose sum is the mean kinetic energy ``<|v|^2>/2``."""
    if vx.grid != vy.grid:
        raise FieldError(f"grid mismatch: {vx.grid} vs {vy.grid}")
    n = vx.grid.n
    px = np.abs(np.fft.rfft2(vx.data)) ** 2
    py = np.abs(np.fft.rfft2(vy.data)) ** 2
    return _shell_sum(vx.grid, 0.5 * (px + py) / n**4)


def energy_spectrum_from_vorticity(omega_hat: np.ndarray, grid: Grid2D) -> EnergySpectrum:
    """Same as :func:`energy_spectrum` for an incompressible velocity given by
    its vorticity coefficients (``|v_k|^2 = |omega_k|^2 / |k|^2``)."""
    k2 = grid.wavenumbers.k2
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(k2 > 0, np.abs(omega_hat) ** 2 / k2, 0.0)
    return _shell_sum(grid, 0.5 * p / grid.n**4)


def normalize_image(img: np.ndarray) -> np.ndarray:
    x = np.asarray(img, dtype=np.float64)
    std = x.std()
    if not std > 0:
        raise FieldError("image has zero standard deviation and cannot be normalized")
    return (x - x.mean()) / std


def image_power_spectrum(img: np.ndarray, normalize: bool = True) -> EnergySpectrum:
    """Shell-averaged ``|F_k|^2 / n^2`` of a square image.

    With ``normalize`` the image is first mapped to zero mean and unit
    standard deviation, as at the classifier input.  A unit-variance white
    image gives about 1 in every shell.
    """
    x = normalize_image(img) if normalize else np.asarray(img, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise FieldError(f"expected a square image, got shape {x.shape}")
    grid = Grid2D(x.shape[0])
    power = np.abs(np.fft.rfft2(x)) ** 2 / x.shape[0] ** 2
    summed = _shell_sum(grid, power)
    counts = _shell_sum(grid, np.ones(grid.spectral_shape)).E
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, summed.E / counts, 0.0)
    return EnergySpectrum(summed.shells, mean)


def fit_power_law(spec: EnergySpectrum, band: tuple[float, float]) -> PowerLawFit:
    """Least-squares line through ``(log k, log E)`` for shells in ``band``."""
    k_lo, k_hi = band
    sel = (spec.shells >= k_lo) & (spec.shells <= k_hi) & (spec.shells > 0)
    if not np.any(sel):
        raise FieldError(f"no shells in band {band}")
    k = spec.shells[sel].astype(float)
    E = spec.E[sel]
    if np.any(E <= 0):
        raise FieldError(f"non-positive energy in band {band}")
    if k.size < 4:
        raise FieldError(f"band {band} holds {k.size} shells, need at least 4")
    x, y = np.log(k), np.log(E)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(slope), float(intercept), (float(k_lo), float(k_hi)), float(r2), int(k.size))


def structure_function(
    vx: RealField,
    vy: RealField,
    orders=(2, 3, 4),
    separations=(1, 2, 4, 8),
    fit_band: tuple[int, int] | None = None,
) -> StructureFunctions:
    """Longitudinal structure functions with periodic wrap.

    ``separations`` are lags in grid steps.  For each lag the increment of
    ``vx`` along x and of ``vy`` along y are pooled, so ``S_n(r)`` is the mean
    over all points and both axis directions.
    """
    orders = [int(o) for o in orders]
    if any(o < 1 or o > 8 for o in orders):
        raise FieldError("structure function orders must lie in 1..8")
    lags = np.asarray(separations, dtype=int)
    vals = np.empty((len(orders), lags.size))
    for j, lag in enumerate(lags):
        dx_incr = np.roll(vx.data, -lag, axis=1) - vx.data
        dy_incr = np.roll(vy.data, -lag, axis=0) - vy.data
        for i, n in enumerate(orders):
            vals[i, j] = 0.5 * (np.mean(dx_incr**n) + np.mean(dy_incr**n))
    r = lags * vx.grid.dx
    out = StructureFunctions(orders, r, vals)
    if fit_band is not None:
        lo, hi = fit_band
        sel = (lags >= lo) & (lags <= hi)
        for i, n in enumerate(orders):
            y = np.abs(vals[i, sel])
            if sel.sum() >= 2 and np.all(y > 0):
                out.exponents[n] = float(np.polyfit(np.log(r[sel]), np.log(y), 1)[0])
    return out


@dataclass
class HistogramPDF:
    edges: np.ndarray
    density: np.ndarray
    mean: float
    std: float

    def gaussian(self, x: np.ndarray) -> np.ndarray:
        if self.std == 0:
            return np.zeros_like(x)
        return np.exp(-0.5 * ((x - self.mean) / self.std) ** 2) / (self.std * math.sqrt(2 * math.pi))


def histogram_pdf(data, bins: int = 50) -> HistogramPDF:
    """Normalized histogram plus a moment-fitted Gaussian."""
    if bins < 10:
        raise FieldError("histogram needs at least 10 bins")
    x = np.asarray(data.data if isinstance(data, RealField) else data, dtype=np.float64).ravel()
    mean, std = float(x.mean()), float(x.std())
    if std == 0:
        # np.histogram would spread a constant over a unit-wide range
        edges = mean + np.linspace(-0.5, 0.5, bins + 1) * max(abs(mean), 1.0) * 1e-6
    else:
        edges = np.histogram_bin_edges(x, bins=bins)
    density, edges = np.histogram(x, bins=edges, density=True)
    return HistogramPDF(edges, density, mean, std)


# --- regime labelling -----------------------------------------------------


@dataclass
class RegimeConfig:
    """Quantified version of "the -5/3 scaling is visible".

    A snapshot is turbulent when the fitted slope lies within
    ``slope_tolerance`` of -5/3 with ``r2 >= r2_min`` inside ``band``.
    Snapshots at ``t < t_min`` are spin-up and discarded.

    Two optional knobs (both off by default) make the labels usable on
    small grids, where single-snapshot shell spectra are noisy:

    * ``window``: fit the mean spectrum of all snapshots with
      ``|t' - t| <= window / 2`` instead of the snapshot's own spectrum;
    * ``chaos_margin``: only the leading ``1 - chaos_margin`` fraction of
      ``[t_min, t_first)`` is chaotic; the transition just before the first
      turbulent snapshot is discarded.
    """

    k_forcing: float
    t_min: float
    slope_target: float = -5.0 / 3.0
    slope_tolerance: float = 0.35
    r2_min: float = 0.95
    band: tuple[float, float] | None = None
    window: float = 0.0
    chaos_margin: float = 0.0

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if not 0 <= self.chaos_margin < 1:
            raise ValueError("chaos_margin must lie in [0, 1)")

    def resolved_band(self) -> tuple[float, float]:
        if self.band is not None:
            return tuple(self.band)
        return (max(4.0, self.k_forcing / 4.0), 0.8 * self.k_forcing)


def is_turbulent_spectrum(spec: EnergySpectrum, config: RegimeConfig) -> bool:
    try:
        fit = fit_power_law(spec, config.resolved_band())
    except FieldError:
        return False
    return abs(fit.slope - config.slope_target) <= config.slope_tolerance and fit.r2 >= config.r2_min


def smoothed_spectra(times, spectra, window: float) -> list[EnergySpectrum]:
    """Centered running mean over snapshots within ``window / 2`` in time."""
    if window <= 0:
        return list(spectra)
    t = np.asarray(times, dtype=float)
    size = max(s.E.size for s in spectra)
    E = np.zeros((len(spectra), size))
    for i, s in enumerate(spectra):
        E[i, : s.E.size] = s.E
    csum = np.vstack([np.zeros(size), np.cumsum(E, axis=0)])
    # times are sorted, so each window is a contiguous index range
    lo = np.searchsorted(t, t - 0.5 * window - 1e-12, side="left")
    hi = np.searchsorted(t, t + 0.5 * window + 1e-12, side="right")
    shells = np.arange(size)
    return [EnergySpectrum(shells, (csum[b] - csum[a]) / (b - a)) for a, b in zip(lo, hi)]


def classify_regime(times, spectra, config: RegimeConfig) -> list[str]:
    """Label each snapshot chaotic, turbulent or discard."""
    times = [float(t) for t in times]
    spectra = list(spectra)
    if len(times) != len(spectra):
        raise ValueError("times and spectra differ in length")
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot times must be non-decreasing")
    fitted = smoothed_spectra(times, spectra, config.window)
    flags = [t >= config.t_min and is_turbulent_spectrum(s, config) for t, s in zip(times, fitted)]
    first = next((t for t, f in zip(times, flags) if f), math.inf)
    if first == math.inf:
        log.warning("run never reached the turbulent regime; only chaotic labels assigned")
        chaos_end = math.inf
    else:
        chaos_end = config.t_min + (1.0 - config.chaos_margin) * (first - config.t_min)
    labels = []
    for t, f in zip(times, flags):
        if t < config.t_min:
            labels.append(DISCARD)
        elif t < first:
            labels.append(CHAOTIC if t < chaos_end else DISCARD)
        elif f:
            labels.append(TURBULENT)
        else:
            labels.append(DISCARD)
    return labels


def write_spectra_csv(path: str | os.PathLike, times, spectra) -> None:
    """Spectrum time series as ``t,k,E`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "k", "E"])
        for t, s in zip(times, spectra):
            for k, e in zip(s.shells, s.E):
                w.writerow([repr(float(t)), int(k), repr(float(e))])


def read_spectra_csv(path: str | os.PathLike) -> tuple[list[float], list[EnergySpectrum]]:
    rows: dict[float, list[tuple[int, float]]] = {}
    order: list[float] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t"])
            if t not in rows:
                rows[t] = []
                order.append(t)
            rows[t].append((int(row["k"]), float(row["E"])))
    spectra = []
    for t in order:
        ks, Es = zip(*rows[t])
        spectra.append(EnergySpectrum(np.asarray(ks), np.asarray(Es)))
    return order, spectra
