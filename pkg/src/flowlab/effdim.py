"""Effective dimension of stage representations: PCA of the
``(N*H*W) x C`` activation matrix and the exponential of the entropy of its
explained-variance ratios."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .nnet import Checkpoint, StageNet, normalize_input

DEFAULT_ROW_CAP = 2_000_000
EIG_RTOL = 1e-12


class EffDimError(ValueError):
    """Raised for degenerate or inconsistent activation data."""


@dataclass
class CovarianceAccumulator:
    """Streaming column means and centered cross products (Chan's merge),
    accumulated in float64.  Merging batches in a fixed order makes the result
    reproducible."""

    n_cols: int
    count: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.n_cols)
        if self.m2 is None:
            self.m2 = np.zeros((self.n_cols, self.n_cols))

    def update(self, rows: np.ndarray) -> None:
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_cols:
            raise EffDimError(f"expected rows with {self.n_cols} columns, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise EffDimError("activation rows contain non-finite values")
        nb = x.shape[0]
        if nb == 0:
            return
        mb = x.mean(axis=0)
        xc = x - mb
        m2b = xc.T @ xc
        n = self.count + nb
        delta = mb - self.mean
        self.m2 += m2b + np.outer(delta, delta) * (self.count * nb / n)
        self.mean += delta * (nb / n)
        self.count = n

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise EffDimError("need at least 2 rows for a covariance")
        return self.m2 / (self.count - 1)


@dataclass
class ActivationMatrix:
    """Rows are spatial samples, columns are channels."""

    data: np.ndarray
    stage: int
    total_rows: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise EffDimError(f"activation matrix must be 2D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise EffDimError("activation matrix has non-finite entries")
        if not self.total_rows:
            self.total_rows = self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]


@dataclass
class VarianceSpectrum:
    ratios: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ratios, dtype=np.float64)
        if r.ndim != 1 or r.size == 0:
            raise EffDimError("variance spectrum must be a non-empty vector")
        if np.any(r < 0) or not abs(r.sum() - 1.0) <= 1e-10:
            raise EffDimError("ratios must be non-negative and sum to 1")
        self.ratios = r


def spectrum_from_covariance(cov: np.ndarray) -> VarianceSpectrum:
    """Eigenvalues of a symmetric covariance, clipped at zero and
    normalized, in descending order."""
    cov = 0.5 * (cov + cov.T)
    lam = np.linalg.eigvalsh(cov)[::-1]
    top = float(lam[0]) if lam.size else 0.0
    if not top > 0:
        raise EffDimError("activations have zero total variance (degenerate representation)")
    lam = np.where(lam > EIG_RTOL * top, lam, 0.0)
    return VarianceSpectrum(lam / lam.sum())


def explained_variance_ratios(m: ActivationMatrix | np.ndarray, batch_rows: int = 65536) -> VarianceSpectrum:
    """PCA explained-variance ratios with centered columns."""
    data = m.data if isinstance(m, ActivationMatrix) else np.asarray(m)
    if data.ndim != 2 or data.shape[0] < 2:
        raise EffDimError("need a 2D matrix with at least 2 rows")
    acc = CovarianceAccumulator(data.shape[1])
    for i in range(0, data.shape[0], batch_rows):
        acc.update(data[i : i + batch_rows])
    return spectrum_from_covariance(acc.covariance())


def effective_dimension(s: VarianceSpectrum | np.ndarray) -> float:
    """``exp(-sum r log r)`` with ``0 log 0 = 0``."""
    r = s.ratios if isinstance(s, VarianceSpectrum) else VarianceSpectrum(np.asarray(s)).ratios
    nz = r[r > 0]
    return float(math.exp(-float(np.sum(nz * np.log(nz)))))


def stage_activations(net: StageNet, images: np.ndarray, batch_size: int = 32):
    """Yield per-batch NHWC stage outputs for raw images."""
    for i in range(0, len(images), batch_size):
        x = normalize_input(images[i : i + batch_size], net.dtype)
        _, stages, _ = net.forward(x)
        yield stages


def _row_selection(total: int, row_cap: int | None, seed: int, stage: int) -> np.ndarray | None:
    if row_cap is None or total <= row_cap:
        return None
    gen = rngmod.stream(seed, "effdim-rows", stage)
    return np.sort(gen.choice(total, size=int(row_cap), replace=False))


def _check_stage_rows(net: StageNet, n_images: int, size: int):
    shapes = net.config.stage_shapes(size)
    for s, (c, h, w) in enumerate(shapes, start=1):
        total = n_images * h * w
        if total < 50 * c:
            raise EffDimError(f"stage {s}: {total} rows for C={c}; at least {50 * c} required")
    return shapes


def collect_activation_matrix(
    net: StageNet | Checkpoint,
    images: np.ndarray,
    stage: int,
    row_cap: int | None = DEFAULT_ROW_CAP,
    seed: int = 0,
    batch_size: int = 32,
) -> ActivationMatrix:
    """Stage ``stage`` (1-based) outputs flattened to ``(N*H*W, C)``.

    Past ``row_cap`` rows, a seeded uniform subset of row indices is kept
    (drawn from the seed and the total row count only).
    """
    net = net.net if isinstance(net, Checkpoint) else net
    n_stages = len(net.config.channels)
    if not 1 <= stage <= n_stages:
        raise EffDimError(f"stage must lie in 1..{n_stages}")
    c, h, w = net.config.stage_shapes(images.shape[1])[stage - 1]
    total = len(images) * h * w
    if total < 50 * c:
        raise EffDimError(f"{total} rows for C={c}; at least {50 * c} required")
    keep = _row_selection(total, row_cap, seed, stage)
    parts = []
    start = 0
    for stages in stage_activations(net, images, batch_size):
        a = stages[stage - 1].reshape(-1, c)
        stop = start + a.shape[0]
        if keep is None:
            parts.append(np.array(a))
        else:
            lo, hi = np.searchsorted(keep, [start, stop])
            parts.append(a[keep[lo:hi] - start])
        start = stop
    return ActivationMatrix(np.concatenate(parts), stage, total)


def stage_spectra(
    net: StageNet | Checkpoint,
    images: np.ndarray,
    row_cap: int | None = DEFAULT_ROW_CAP,
    seed: int = 0,
    batch_size: int = 32,
) -> list[VarianceSpectrum]:
    """Variance spectra of every stage from one pass over ``images``.

    Same rows as :func:`collect_activation_matrix` per stage, but the rows are
    streamed into covariance accumulators instead of being stored.
    """
    net = net.net if isinstance(net, Checkpoint) else net
    shapes = _check_stage_rows(net, len(images), images.shape[1])
    accs = [CovarianceAccumulator(c) for c, _, _ in shapes]
    keeps = [_row_selection(len(images) * h * w, row_cap, seed, s) for s, (_, h, w) in enumerate(shapes, start=1)]
    starts = [0] * len(shapes)
    for stages in stage_activations(net, images, batch_size):
        for s, a in enumerate(stages):
            a = a.reshape(-1, shapes[s][0])
            stop = starts[s] + a.shape[0]
            keep = keeps[s]
            if keep is None:
                accs[s].update(a)
            else:
                lo, hi = np.searchsorted(keep, [starts[s], stop])
                accs[s].update(a[keep[lo:hi] - starts[s]])
            starts[s] = stop
    return [spectrum_from_covariance(acc.covariance()) for acc in accs]


@dataclass
class StageStats:
    mean: float
    std: float
    per_seed: list[float]
    spectra: list[list[float]] = field(default_factory=list)


@dataclass
class EffDimReport:
    task: str
    stages: list[StageStats]
    seeds: list[int]
    row_cap: int | None
    checkpoint_hashes: list[str]
    variant: str = "trained"

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "stages": [
                {"stage": i + 1, "mean": s.mean, "std": s.std, "per_seed": s.per_seed}
                for i, s in enumerate(self.stages)
            ],
            "seeds": self.seeds,
            "caps": {"row_cap": self.row_cap},
            "checkpoint_hashes": self.checkpoint_hashes,
        }

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["task", "variant", "stage", "mean", "std", "n_seeds"])
                for i, s in enumerate(self.stages):
                    w.writerow([self.task, self.variant, i + 1, f"{s.mean:.6f}", f"{s.std:.6f}", len(s.per_seed)])


def effdim_report(
    task: str,
    nets: list[StageNet | Checkpoint],
    images: np.ndarray,
    seeds: list[int] | None = None,
    row_cap: int | None = DEFAULT_ROW_CAP,
    variant: str = "trained",
    sample_seed: int = 0,
) -> EffDimReport:
    """Per-stage mean and (population) std of the effective dimension over
    several networks, e.g. the 5 training seeds or their untrained
    initializations."""
    if len(nets) < 2:
        raise EffDimError("need at least 2 networks (seeds)")
    plain = [n.net if isinstance(n, Checkpoint) else n for n in nets]
    hashes = [n.config_hash if isinstance(n, Checkpoint) else "" for n in nets]
    cfg0 = plain[0].config
    for p in plain[1:]:
        if p.config.channels != cfg0.channels or p.config.blocks_per_stage != cfg0.blocks_per_stage:
            raise EffDimError("inconsistent stage structure across checkpoints")
    seeds = list(range(len(nets))) if seeds is None else list(seeds)
    per_stage: list[list[float]] = [[] for _ in cfg0.channels]
    spectra: list[list[list[float]]] = [[] for _ in cfg0.channels]
    for net in plain:
        for s, spec in enumerate(stage_spectra(net, images, row_cap, sample_seed)):
            per_stage[s].append(effective_dimension(spec))
            spectra[s].append(spec.ratios.tolist())
    # std of offsets from the first seed: equal values give exactly 0
    stages = [
        StageStats(float(np.mean(v)), float(np.std(np.asarray(v) - v[0])), v, sp) for v, sp in zip(per_stage, spectra)
    ]
    return EffDimReport(task, stages, seeds, row_cap, hashes, variant)
