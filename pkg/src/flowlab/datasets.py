"""Rendering fields to 8-bit images, the two synthetic noise classes, and
labeled image datasets with provenance manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .fieldcore import Grid2D, RealField, mirror_hermitian, self_conjugate_columns
from .forcing import ForcingSpec, sample_annulus_scalar

log = logging.getLogger(__name__)

FIELD_CHOICES = ("vorticity", "vx", "vy", "density")
# snapshot file stems written by the solvers
FIELD_FILE_NAMES = {"vorticity": "omega", "vx": "vx", "vy": "vy", "density": "rho"}
MANIFEST_COLUMNS = ["path", "label", "sim_id", "t", "regime", "generator", "render_hash", "split"]


class DatasetError(ValueError):
    """Raised for invalid render specs, statistics or dataset requests."""


@dataclass(frozen=True)
class RenderSpec:
    """Field selection, output size and the symmetric intensity map.

    Pixel values are ``floor(127.5 * (1 + f / M) + 0.5)`` with ``M = max|f|``,
    so ``+M -> 255``, ``-M -> 0`` and ``0 -> 128``.
    """

    field_select: str = "vorticity"
    out_size: int = 128

    def __post_init__(self):
        if self.field_select not in FIELD_CHOICES:
            raise DatasetError(f"field_select must be one of {FIELD_CHOICES}, got {self.field_select!r}")
        if int(self.out_size) != self.out_size or self.out_size < 32:
            raise DatasetError(f"out_size must be an integer >= 32, got {self.out_size!r}")

    @property
    def file_stem(self) -> str:
        return FIELD_FILE_NAMES[self.field_select]

    def hash(self) -> str:
        blob = json.dumps({"kind": "render", **asdict(self)}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def periodic_bilinear(data: np.ndarray, out_size: int) -> np.ndarray:
    """Resample a periodic square array; output pixel ``j`` sits at input
    coordinate ``j * n / out_size`` on both axes."""
    n = data.shape[0]
    if out_size == n:
        return np.array(data, dtype=np.float64, copy=True)
    pos = np.arange(out_size) * (n / out_size)
    i0 = np.floor(pos).astype(np.int64)
    w = pos - i0
    i0 %= n
    i1 = (i0 + 1) % n
    rows = data[i0, :] * (1 - w)[:, None] + data[i1, :] * w[:, None]
    return rows[:, i0] * (1 - w)[None, :] + rows[:, i1] * w[None, :]


def render_array(data: np.ndarray, out_size: int) -> tuple[np.ndarray, bool]:
    """Resample and map to ``uint8``; also return whether the field was flat zero."""
    x = periodic_bilinear(np.asarray(data, dtype=np.float64), out_size)
    if not np.all(np.isfinite(x)):
        raise DatasetError("cannot render a field with non-finite values")
    M = float(np.max(np.abs(x)))
    if M == 0.0:
        return np.full((out_size, out_size), 128, dtype=np.uint8), True
    pix = np.floor(127.5 * (1.0 + x / M) + 0.5)
    return np.clip(pix, 0, 255).astype(np.uint8), False


def render_field(f: RealField, spec: RenderSpec) -> np.ndarray:
    """8-bit grayscale image of a field (sign-symmetric gray map)."""
    return render_array(f.data, spec.out_size)[0]


# --- noise generators -----------------------------------------------------


def gen_noise_annulus(
    count: int, spec: ForcingSpec, grid: Grid2D, rng: np.random.Generator, out_size: int | None = None
) -> list[np.ndarray]:
    """Images of independent annulus scalars (the forcing-streamfunction
    construction), class ``noise``."""
    size = grid.n if out_size is None else out_size
    out = []
    for _ in range(int(count)):
        phi = sample_annulus_scalar(spec, grid, rng, rms=1.0)
        data = np.fft.irfft2(phi.coeffs, s=(grid.n, grid.n))
        out.append(render_array(data, size)[0])
    return out


@dataclass
class FourierNoiseStats:
    """Per-coefficient moments of ``rfft2`` over a set of images."""

    mean_re: np.ndarray
    mean_im: np.ndarray
    std_re: np.ndarray
    std_im: np.ndarray
    size: int
    count: int
    source: str = ""

    def save(self, path) -> None:
        np.savez(
            path,
            mean_re=self.mean_re,
            mean_im=self.mean_im,
            std_re=self.std_re,
            std_im=self.std_im,
            meta=np.array(json.dumps({"size": self.size, "count": self.count, "source": self.source})),
        )

    @classmethod
    def load(cls, path) -> "FourierNoiseStats":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["mean_re"], z["mean_im"], z["std_re"], z["std_im"], meta["size"], meta["count"], meta["source"])


def _self_conjugate_mask(n: int) -> np.ndarray:
    mask = np.zeros((n, n // 2 + 1), dtype=bool)
    rows = [0] + ([n // 2] if n % 2 == 0 else [])
    for c in self_conjugate_columns(n):
        mask[rows, c] = True
    return mask


def fit_fourier_stats(images, M: int = 1000, source: str = "") -> FourierNoiseStats:
    """Sample mean and standard deviation (``ddof=1``) of the real and
    imaginary parts of every half-plane coefficient over the first ``M``
    images (pixel values as floats)."""
    imgs = list(images)[: int(M)]
    if len(imgs) < 2:
        raise DatasetError("need at least 2 images to fit Fourier statistics")
    shape = np.asarray(imgs[0]).shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise DatasetError(f"expected square 2D images, got shape {shape}")
    for im in imgs:
        if np.asarray(im).shape != shape:
            raise DatasetError(f"image size mismatch: {np.asarray(im).shape} vs {shape}")
    n = shape[0]
    # Welford accumulation keeps memory at one coefficient plane
    count = 0
    mean = np.zeros((n, n // 2 + 1), dtype=np.complex128)
    m2_re = np.zeros((n, n // 2 + 1))
    m2_im = np.zeros((n, n // 2 + 1))
    for im in imgs:
        F = np.fft.rfft2(np.asarray(im, dtype=np.float64))
        count += 1
        delta = F - mean
        mean += delta / count
        delta2 = F - mean
        m2_re += delta.real * delta2.real
        m2_im += delta.imag * delta2.imag
    std_re = np.sqrt(m2_re / (count - 1))
    std_im = np.sqrt(m2_im / (count - 1))
    sc = _self_conjugate_mask(n)
    mean_im = mean.imag.copy()
    mean_im[sc] = 0.0
    std_im[sc] = 0.0
    return FourierNoiseStats(mean.real.copy(), mean_im, std_re, std_im, n, count, source)


def fourier_noise_fields(stats: FourierNoiseStats, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Real-valued noise images before quantization.

    Every coefficient is drawn independently; Hermitian consistency on the
    self-conjugate columns comes from mirroring the upper rows, which keeps
    the drawn variance.
    """
    n = stats.size
    out = []
    for _ in range(int(count)):
        z = rng.standard_normal((2,) + stats.mean_re.shape)
        coeffs = (stats.mean_re + stats.std_re * z[0]) + 1j * (stats.mean_im + stats.std_im * z[1])
        coeffs = mirror_hermitian(coeffs)
        out.append(np.fft.irfft2(coeffs, s=(n, n)))
    return out


def gen_noise_fourier(stats: FourierNoiseStats, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Images with the per-coefficient Gaussian statistics of a source set,
    rounded and clipped back to 8 bits (class ``noise_fourier:<source>``)."""
    return [
        np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)
        for x in fourier_noise_fields(stats, count, rng)
    ]


def hermitian_expand(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Full-plane coefficients from a half plane, assuming Hermitian symmetry."""
    full = np.zeros((n, n), dtype=np.complex128)
    h = n // 2 + 1
    full[:, :h] = coeffs
    ky = (-np.arange(n)) % n
    for kx in range(h, n):
        full[:, kx] = np.conj(coeffs[ky, n - kx])
    return full


# --- manifests ------------------------------------------------------------


@dataclass
class ImageSample:
    """One image with its provenance, before it is assigned a split."""

    image: np.ndarray
    label: str
    sim_id: str
    t: float | None = None
    regime: str = ""
    generator: str = ""
    render_hash: str = ""


def sample_from_field(
    f: RealField,
    spec: RenderSpec,
    label: str,
    sim_id: str,
    t: float | None = None,
    regime: str = "",
    generator: str = "sim",
) -> ImageSample:
    """Render a snapshot; an all-zero field is kept but flagged ``+flat``."""
    img, flat = render_array(f.data, spec.out_size)
    if flat:
        generator = generator + "+flat"
    return ImageSample(img, label, sim_id, t, regime, generator, spec.hash())


@dataclass
class ManifestRow:
    path: str
    label: str
    sim_id: str
    t: float | None
    regime: str
    generator: str
    render_hash: str
    split: str

    def to_csv(self) -> list[str]:
        return [
            self.path,
            self.label,
            self.sim_id,
            "" if self.t is None else repr(float(self.t)),
            self.regime,
            self.generator,
            self.render_hash,
            self.split,
        ]


@dataclass
class DatasetManifest:
    """Rows with paths relative to ``root`` (the manifest's directory)."""

    rows: list[ManifestRow]
    root: Path = field(default_factory=Path)

    def select(self, split: str | None = None, labels=None) -> "DatasetManifest":
        rows = [
            r
            for r in self.rows
            if (split is None or r.split == split) and (labels is None or r.label in labels)
        ]
        return DatasetManifest(rows, self.root)

    @property
    def labels(self) -> list[str]:
        return sorted({r.label for r in self.rows})

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for r in self.rows:
            out[(r.split, r.label)] = out.get((r.split, r.label), 0) + 1
        return out

    def __len__(self) -> int:
        return len(self.rows)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_COLUMNS)
            for r in self.rows:
                w.writerow(r.to_csv())

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != MANIFEST_COLUMNS:
                raise DatasetError(f"{path}: unexpected manifest header {reader.fieldnames}")
            for d in reader:
                t = float(d["t"]) if d["t"] != "" else None
                rows.append(
                    ManifestRow(d["path"], d["label"], d["sim_id"], t, d["regime"], d["generator"], d["render_hash"], d["split"])
                )
        return cls(rows, path.parent)

    def load_images(self) -> np.ndarray:
        """All images as a ``(N, H, W)`` uint8 array, in row order."""
        if not self.rows:
            raise DatasetError("manifest has no rows")
        return np.stack([load_png(self.root / r.path) for r in self.rows])

    def verify(self) -> None:
        """Referential integrity: files exist and carry a recorded render hash."""
        missing = [r.path for r in self.rows if not (self.root / r.path).is_file()]
        if missing:
            raise DatasetError(f"{len(missing)} manifest files missing, first: {missing[0]}")
        unhashed = [r.path for r in self.rows if not r.render_hash]
        if unhashed:
            raise DatasetError(f"{len(unhashed)} rows lack a render hash, first: {unhashed[0]}")


def save_png(img: np.ndarray, path) -> None:
    arr = np.asarray(img)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise DatasetError(f"expected a 2D uint8 image, got {arr.dtype} {arr.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep the bytes reproducible
    Image.fromarray(arr, mode="L").save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


def _safe(name: str) -> str:
    return _SAFE.sub("_", name)


@dataclass(frozen=True)
class SplitConfig:
    """How many rows per class go to each split.

    Give either ``test_fraction`` (of each class's rows) or
    ``test_per_class``.  ``train_per_class`` caps the training rows;
    ``balance`` trims every class to the smallest class count per split.
    """

    test_fraction: float | None = 0.2
    test_per_class: int | None = None
    train_per_class: int | None = None
    balance: bool = True
    seed: int = 0

    def __post_init__(self):
        if (self.test_fraction is None) == (self.test_per_class is None):
            raise DatasetError("give exactly one of test_fraction and test_per_class")
        if self.test_fraction is not None and not 0 <= self.test_fraction < 1:
            raise DatasetError("test_fraction must lie in [0, 1)")


def _stable_order(keys: list[str], seed: int, salt: str) -> list[str]:
    def h(k: str) -> str:
        return hashlib.sha256(f"{seed}:{salt}:{k}".encode()).hexdigest()

    return sorted(keys, key=h)


def assign_splits(samples: list[ImageSample], config: SplitConfig) -> list[tuple[ImageSample, str]]:
    """Assign whole simulations to test until every class has its test
    quota, then trim and balance.  Rows are never split within a sim id."""
    by_class: dict[str, list[ImageSample]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    if not by_class:
        raise DatasetError("no samples given")
    totals = {c: len(v) for c, v in by_class.items()}
    if config.test_per_class is not None:
        quota = {c: int(config.test_per_class) for c in by_class}
    else:
        quota = {c: int(round(config.test_fraction * totals[c])) for c in by_class}
    if config.balance:
        q = min(quota.values())
        quota = {c: q for c in quota}

    sims: dict[str, dict[str, int]] = {}
    for s in samples:
        sims.setdefault(s.sim_id, {}).setdefault(s.label, 0)
        sims[s.sim_id][s.label] += 1
    test_sims: set[str] = set()
    have = {c: 0 for c in by_class}
    for sim in _stable_order(sorted(sims), config.seed, "split"):
        if all(have[c] >= quota[c] for c in quota):
            break
        if any(have[c] < quota[c] and sims[sim].get(c, 0) > 0 for c in quota):
            test_sims.add(sim)
            for c, k in sims[sim].items():
                have[c] += k
    short = {c: (have[c], quota[c]) for c in quota if have[c] < quota[c]}
    if short:
        raise DatasetError(
            "insufficient snapshots for the test split (have, need) per class: "
            + ", ".join(f"{c}: {h}/{q}" for c, (h, q) in sorted(short.items()))
            + f"; totals {dict(sorted(totals.items()))}"
        )

    out: list[tuple[ImageSample, str]] = []
    train_avail = {
        c: sum(1 for s in v if s.sim_id not in test_sims) for c, v in by_class.items()
    }
    n_train = dict(train_avail)
    if config.train_per_class is not None:
        lacking = {c: k for c, k in train_avail.items() if k < config.train_per_class}
        if lacking:
            raise DatasetError(
                f"insufficient snapshots for {config.train_per_class} training rows per class: "
                + ", ".join(f"{c}: {k}" for c, k in sorted(lacking.items()))
                + f"; totals {dict(sorted(totals.items()))}"
            )
        n_train = {c: int(config.train_per_class) for c in by_class}
    if config.balance:
        m = min(n_train.values())
        n_train = {c: m for c in n_train}
    for c in sorted(by_class):
        rows = by_class[c]
        test = [s for s in rows if s.sim_id in test_sims]
        train = [s for s in rows if s.sim_id not in test_sims]
        out.extend((s, "test") for s in subsample_evenly(test, quota[c], config.seed, c + ":test"))
        out.extend((s, "train") for s in subsample_evenly(train, n_train[c], config.seed, c + ":train"))
    return out


def subsample_evenly(rows: list[ImageSample], k: int, seed: int, salt: str) -> list[ImageSample]:
    """Deterministic evenly spread subset of ``k`` rows, in original order."""
    if k >= len(rows):
        return list(rows)
    if k <= 0:
        return []
    ordered = sorted(rows, key=lambda s: (s.sim_id, -1.0 if s.t is None else s.t))
    idx = np.unique(np.floor(np.linspace(0, len(ordered), k, endpoint=False)).astype(int))
    picked = {id(ordered[i]) for i in idx}
    return [s for s in rows if id(s) in picked]


def build_dataset(samples: list[ImageSample], out_dir, config: SplitConfig) -> DatasetManifest:
    """Split by sim id, write PNG files and ``manifest.csv`` under ``out_dir``."""
    return write_dataset(assign_splits(samples, config), out_dir)


def write_dataset(assigned: list[tuple[ImageSample, str]], out_dir) -> DatasetManifest:
    """Write already split samples as ``split/label/simid_i.png`` plus ``manifest.csv``."""
    out = Path(out_dir)
    rows = []
    counter: dict[tuple[str, str], int] = {}
    for s, split in assigned:
        key = (split, s.label)
        i = counter.get(key, 0)
        counter[key] = i + 1
        rel = Path(split) / _safe(s.label) / f"{_safe(s.sim_id)}_{i:06d}.png"
        save_png(s.image, out / rel)
        rows.append(ManifestRow(rel.as_posix(), s.label, s.sim_id, s.t, s.regime, s.generator, s.render_hash, split))
    manifest = DatasetManifest(rows, out)
    manifest.write(out / "manifest.csv")
    return manifest


def import_images(folder, out_size: int, out_dir, split: str = "test") -> DatasetManifest:
    """Ingest ``folder/<label>/*`` as grayscale ``out_size``-square PNGs.

    Color images are converted with the ITU-R 601 luminance weights and
    resized bilinearly, ignoring the aspect ratio.  Files that cannot be
    decoded are skipped and counted in a warning.
    """
    folder = Path(folder)
    out = Path(out_dir)
    rows = []
    skipped = 0
    spec_hash = hashlib.sha256(json.dumps({"kind": "import", "out_size": out_size}).encode()).hexdigest()[:16]
    for label_dir in sorted(p for p in folder.iterdir() if p.is_dir()):
        label = label_dir.name
        for i, path in enumerate(sorted(p for p in label_dir.iterdir() if p.is_file())):
            try:
                with Image.open(path) as im:
                    im.load()
                    gray = im.convert("L")
            except (OSError, ValueError):
                skipped += 1
                continue
            if gray.size != (out_size, out_size):
                gray = gray.resize((out_size, out_size), Image.BILINEAR)
            rel = Path(split) / _safe(label) / f"{_safe(path.stem)}_{i:06d}.png"
            save_png(np.asarray(gray, dtype=np.uint8), out / rel)
            rows.append(ManifestRow(rel.as_posix(), label, f"import:{label}/{path.name}", None, "", "import", spec_hash, split))
    if skipped:
        log.warning("skipped %d undecodable files under %s", skipped, folder)
    manifest = DatasetManifest(rows, out)
    manifest.write(out / "manifest.csv")
    return manifest


def relabel(samples: list[ImageSample], label: str) -> list[ImageSample]:
    return [replace(s, label=label) for s in samples]
