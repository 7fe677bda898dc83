"""Staged convolutional binary classifier in plain numpy.

Tensors are NHWC internally.  Convolutions are 3x3 with padding 1, computed
as one GEMM over an im2col matrix whose columns are ordered
``(ky, kx, c_in)``; weights have shape ``(3, 3, c_in, c_out)``.  Gradients
are exact reverse-mode derivatives of

    mean BCE(sigmoid(logit), y) + weight_decay / 2 * sum(theta**2).

All reductions run in a fixed order on a single thread, so a given seed,
data set and configuration reproduce the same parameter bits.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng as rngmod

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"STAGENET1\n"


class NetError(ValueError):
    """Raised for malformed inputs, configs or checkpoint files."""


@dataclass(frozen=True)
class NetConfig:
    """Stage widths, conv blocks per stage and stem stride.

    Stage ``s > 1`` starts with a stride-2 block.  The stem maps the single
    input channel to ``channels[0]``.  With ``skip`` an identity shortcut is
    added to every block whose input and output shapes agree.
    """

    channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    stem_stride: int = 2
    skip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels or any(c < 1 for c in self.channels):
            raise NetError("channels must be a non-empty list of positive widths")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise NetError("channel counts must be non-decreasing across stages")
        if self.blocks_per_stage < 1:
            raise NetError("each stage needs at least one conv block")
        if self.stem_stride not in (1, 2):
            raise NetError("stem_stride must be 1 or 2")

    def to_dict(self) -> dict:
        return {**asdict(self), "channels": list(self.channels)}

    def layers(self) -> list[tuple[str, int, int, int, int]]:
        """``(name, c_in, c_out, stride, stage)`` for every conv layer; stage 0 is the stem."""
        out = [("stem", 1, self.channels[0], self.stem_stride, 0)]
        c_prev = self.channels[0]
        for s, c in enumerate(self.channels, start=1):
            for b in range(self.blocks_per_stage):
                stride = 2 if (b == 0 and s > 1) else 1
                out.append((f"s{s}.b{b}", c_prev, c, stride, s))
                c_prev = c
        return out

    def stage_shapes(self, size: int) -> list[tuple[int, int, int]]:
        """``(C, H, W)`` at each stage output for a ``size``-square input."""
        h = size
        shapes = []
        for name, _, c_out, stride, stage in self.layers():
            h = (h - 1) // stride + 1
            if stage > 0 and name.endswith(f"b{self.blocks_per_stage - 1}"):
                shapes.append((c_out, h, h))
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 20
    target_accuracy: float = 0.99
    seed: int = 0
    positive_label: str = "turbulence"
    eval_batch_size: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise NetError("lr must be positive")
        if not self.weight_decay >= 0:
            raise NetError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise NetError("batch_size and max_epochs must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(net: NetConfig, train: TrainConfig | None = None) -> str:
    payload = {"net": net.to_dict(), "train": None if train is None else train.to_dict()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --- primitives ---------------------------------------------------------------


def normalize_input(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Per-image ``(x - mean) / std``; accepts ``(H, W)`` or ``(N, H, W)``."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise NetError(f"expected (H, W) or (N, H, W) images, got shape {x.shape}")
    axes = (-2, -1)
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, keepdims=True)
    if np.any(~(std > 0)):
        raise NetError("image with zero standard deviation cannot be normalized")
    return ((x - mean) / std).astype(dtype)


def _im2col(x: np.ndarray, stride: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, : stride * ho : stride, : stride * wo : stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, 9 * c)
    return cols, (n, ho, wo)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    cols, (n, ho, wo) = _im2col(x, stride)
    out = cols @ w.reshape(-1, w.shape[-1])
    out += b
    return out.reshape(n, ho, wo, w.shape[-1]), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape, stride: int, need_dx: bool = True):
    n, ho, wo, c_out = dout.shape
    d2 = dout.reshape(-1, c_out)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    _, h, wd, c_in = x_shape
    dcols = (d2 @ w.reshape(-1, c_out).T).reshape(n, ho, wo, 3, 3, c_in)
    dxp = np.zeros((n, h + 2, wd + 2, c_in), dtype=dout.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride] += dcols[:, :, :, ky, kx]
    return dxp[:, 1:-1, 1:-1], dw, db


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean ``softplus(z) - y z``, the stable form of binary cross-entropy."""
    z = z.astype(np.float64)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


# --- the network ----------------------------------------------------------


class StageNet:
    """Parameters plus forward/backward passes for a :class:`NetConfig`."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray], dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        expected = self.param_shapes(config)
        if list(params) != list(expected):
            raise NetError(f"parameter names {list(params)} do not match the config")
        for k, shape in expected.items():
            if tuple(params[k].shape) != shape:
                raise NetError(f"parameter {k} has shape {params[k].shape}, expected {shape}")
        self.params = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in params.items()}

    @staticmethod
    def param_shapes(config: NetConfig) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for name, c_in, c_out, _, _ in config.layers():
            shapes[f"{name}.w"] = (3, 3, c_in, c_out)
            shapes[f"{name}.b"] = (c_out,)
        shapes["head.w"] = (config.channels[-1], 1)
        shapes["head.b"] = (1,)
        return shapes

    @classmethod
    def initialize(cls, config: NetConfig, seed: int, dtype=np.float32, zero_head: bool = False) -> "StageNet":
        """He-style fan-in scaling: conv weights ``N(0, 2 / fan_in)``, head
        ``N(0, 1 / fan_in)``, biases zero."""
        gen = rngmod.stream(seed, "nnet-init")
        params = {}
        for name, shape in cls.param_shapes(config).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            elif name == "head.w":
                params[name] = np.zeros(shape) if zero_head else gen.standard_normal(shape) / math.sqrt(shape[0])
            else:
                fan_in = shape[0] * shape[1] * shape[2]
                params[name] = gen.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        return cls(config, params, dtype)

    def astype(self, dtype) -> "StageNet":
        return StageNet(self.config, {k: v.copy() for k, v in self.params.items()}, dtype)

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4 or x.shape[-1] != 1 or x.shape[1] != x.shape[2]:
            raise NetError(f"expected a batch of square single-channel images, got shape {x.shape}")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x: np.ndarray, keep: bool = False):
        """Logits ``(N,)``, stage outputs (NHWC) and, with ``keep``, the
        tape needed by :meth:`backward`."""
        x = self._check_batch(x)
        p = self.params
        tape = [] if keep else None
        stages = []
        h = x
        last_block = f"b{self.config.blocks_per_stage - 1}"
        for name, c_in, c_out, stride, stage in self.config.layers():
            z, cols = conv_forward(h, p[f"{name}.w"], p[f"{name}.b"], stride)
            shortcut = self.config.skip and stage > 0 and stride == 1 and c_in == c_out
            if shortcut:
                z += h
            a = np.maximum(z, 0)
            if keep:
                tape.append((name, stride, h.shape, cols, z > 0, shortcut))
            h = a
            if stage > 0 and name.endswith(last_block):
                stages.append(h)
        pooled = h.mean(axis=(1, 2))
        logits = (pooled @ p["head.w"])[:, 0] + p["head.b"][0]
        if keep:
            tape.append(("head", pooled, h.shape))
        return logits, stages, tape

    def backward(self, tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        _, pooled, h_shape = tape[-1]
        d = dlogits.astype(self.dtype)[:, None]
        grads["head.w"] = pooled.T @ d
        grads["head.b"] = d.sum(axis=0)
        n, hh, ww, c = h_shape
        dh = np.broadcast_to((d @ p["head.w"].T)[:, None, None, :] / (hh * ww), h_shape).astype(self.dtype)
        for name, stride, x_shape, cols, mask, shortcut in reversed(tape[:-1]):
            dz = dh * mask
            dx, dw, db = conv_backward(dz, cols, p[f"{name}.w"], x_shape, stride, need_dx=name != "stem")
            grads[f"{name}.w"] = dw
            grads[f"{name}.b"] = db
            if dx is not None:
                dh = dx + dz if shortcut else dx
        return {k: grads[k] for k in p}


def forward_with_stages(net: StageNet, batch: np.ndarray):
    """Probabilities and stage activations in ``(N, C, H, W)`` layout."""
    logits, stages, _ = net.forward(batch)
    return sigmoid(logits.astype(np.float64)), [s.transpose(0, 3, 1, 2) for s in stages]


def loss_value(net: StageNet, batch: np.ndarray, labels: np.ndarray, weight_decay: float) -> float:
    logits, _, _ = net.forward(batch)
    reg = 0.5 * weight_decay * sum(float(np.sum(v.astype(np.float64) ** 2)) for v in net.params.values())
    return bce_with_logits(logits, np.asarray(labels, dtype=np.float64)) + reg


def compute_gradients(net: StageNet, batch: np.ndarray, labels: np.ndarray, weight_decay: float = 0.0):
    """Loss and exact gradients of mean BCE plus ``weight_decay/2 * |theta|^2``."""
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise NetError("labels must be 0 or 1")
    logits, _, tape = net.forward(batch, keep=True)
    if y.shape != logits.shape:
        raise NetError(f"{y.size} labels for a batch of {logits.size}")
    prob = sigmoid(logits.astype(np.float64))
    dlogits = (prob - y) / y.size
    grads = net.backward(tape, dlogits)
    if weight_decay:
        for k, v in net.params.items():
            grads[k] = grads[k] + net.dtype.type(weight_decay) * v
    reg = 0.5 * weight_decay * sum(float(np.sum(v.astype(np.float64) ** 2)) for v in net.params.values())
    return bce_with_logits(logits, y) + reg, grads


# --- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(x) for k, x in params.items()}, {k: np.zeros_like(x) for k, x in params.items()}, 0)


def adam_update(params, grads, state: AdamState, config: TrainConfig):
    """One Adam step with bias correction, in place; returns ``(params, state)``.

    Weight decay is expected inside ``grads`` (coupled L2 form).
    """
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise NetError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + config.eps)
        p -= (config.lr * step).astype(p.dtype)
    return params, state


# --- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    net: StageNet
    adam: AdamState | None
    epoch: int
    seed: int
    train_config: TrainConfig | None
    labels: tuple[str, str] = ("chaos", "turbulence")  # (negative, positive)
    config_hash: str = ""

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.net.config, self.train_config)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [(k, v) for k, v in self.net.params.items()]
        if self.adam is not None:
            out += [(f"adam.m.{k}", v) for k, v in self.adam.m.items()]
            out += [(f"adam.v.{k}", v) for k, v in self.adam.v.items()]
        return out


def save_checkpoint(ck: Checkpoint, path) -> None:
    """JSON header line (tensor directory, hashes, seed) then little-endian float32 data."""
    directory = []
    payload = io.BytesIO()
    offset = 0
    for name, arr in ck.tensors():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.write(data)
        offset += len(data)
    header = {
        "format": "stagenet-1",
        "tensors": directory,
        "net": ck.net.config.to_dict(),
        "train": None if ck.train_config is None else ck.train_config.to_dict(),
        "config_hash": ck.config_hash,
        "seed": ck.seed,
        "epoch": ck.epoch,
        "adam_t": None if ck.adam is None else ck.adam.t,
        "labels": list(ck.labels),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.getvalue())


def load_checkpoint(path, expected_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise NetError(f"{path}: not a checkpoint file")
    end = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(raw[len(CHECKPOINT_MAGIC) : end])
    payload = raw[end + 1 :]
    net_cfg = NetConfig(**header["net"])
    train_cfg = None if header["train"] is None else TrainConfig(**header["train"])
    recomputed = config_hash(net_cfg, train_cfg)
    if recomputed != header["config_hash"]:
        raise NetError(f"{path}: config hash mismatch (stored {header['config_hash']}, recomputed {recomputed})")
    if expected_hash is not None and expected_hash != header["config_hash"]:
        raise NetError(f"{path}: checkpoint hash {header['config_hash']} != expected {expected_hash}")
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        chunk = payload[t["offset"] : t["offset"] + 4 * count]
        if len(chunk) != 4 * count:
            raise NetError(f"{path}: truncated tensor {t['name']}")
        arrays[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"]).astype(np.float32)
    names = list(StageNet.param_shapes(net_cfg))
    net = StageNet(net_cfg, {k: arrays[k] for k in names})
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState({k: arrays[f"adam.m.{k}"] for k in names}, {k: arrays[f"adam.v.{k}"] for k in names}, header["adam_t"])
    return Checkpoint(net, adam, header["epoch"], header["seed"], train_cfg, tuple(header["labels"]), header["config_hash"])


# --- training and evaluation --------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    test_acc: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochLog] = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "test_acc"])
            for e in self.log:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.test_acc)])


def predict_proba(net: StageNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Positive-class probabilities for raw ``(N, H, W)`` images."""
    out = []
    for i in range(0, len(images), batch_size):
        x = normalize_input(images[i : i + batch_size], net.dtype)
        logits, _, _ = net.forward(x)
        out.append(sigmoid(logits.astype(np.float64)))
    return np.concatenate(out) if out else np.zeros(0)


def classify(prob: np.ndarray) -> np.ndarray:
    """Threshold at 0.5; exactly 0.5 counts as the negative class."""
    return (np.asarray(prob) > 0.5).astype(np.int64)


def binary_labels(labels, positive: str, negative: str | None = None) -> np.ndarray:
    labels = list(labels)
    bad = [l for l in set(labels) if l != positive and (negative is not None and l != negative)]
    if bad:
        raise NetError(f"unexpected labels {sorted(bad)} for classes ({negative}, {positive})")
    return np.array([1 if l == positive else 0 for l in labels], dtype=np.int64)


def train(
    train_images: np.ndarray,
    train_labels: np.ndarray,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    net_config: NetConfig,
    config: TrainConfig,
    class_names: tuple[str, str] = ("chaos", "turbulence"),
    progress=None,
) -> TrainResult:
    """Adam on shuffled mini-batches until the test accuracy reaches the
    target or ``max_epochs`` pass.  Labels are 0/1 arrays."""
    y_tr = np.asarray(train_labels, dtype=np.int64)
    y_te = np.asarray(test_labels, dtype=np.int64)
    if len(train_images) == 0 or len(test_images) == 0:
        raise NetError("train and test splits must be non-empty")
    counts = np.bincount(y_tr, minlength=2)
    if counts.min() == 0 or counts.max() > 10 * counts.min():
        log.warning("class imbalance in training set: %s", counts.tolist())
    net = StageNet.initialize(net_config, config.seed)
    adam = AdamState.zeros_like(net.params)
    result = TrainResult(Checkpoint(net, adam, 0, config.seed, config, class_names))
    n = len(train_images)
    for epoch in range(1, config.max_epochs + 1):
        order = rngmod.stream(config.seed, "nnet-shuffle", epoch).permutation(n)
        total = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i : i + config.batch_size]
            x = normalize_input(train_images[idx], net.dtype)
            loss, grads = compute_gradients(net, x, y_tr[idx], config.weight_decay)
            adam_update(net.params, grads, adam, config)
            total += loss * len(idx)
        prob = predict_proba(net, test_images, config.eval_batch_size)
        acc = float(np.mean(classify(prob) == y_te))
        result.log.append(EpochLog(epoch, total / n, acc))
        result.checkpoint = Checkpoint(net, adam, epoch, config.seed, config, class_names)
        if progress is not None:
            progress(result.log[-1])
        log.info("epoch %d loss %.4f test_acc %.4f", epoch, total / n, acc)
        if acc >= config.target_accuracy:
            break
    return result


@dataclass
class Evaluation:
    accuracy: float
    probabilities: np.ndarray
    labels: np.ndarray


def evaluate(ck: Checkpoint, images: np.ndarray, labels, expected_hash: str | None = None, batch_size: int = 64) -> Evaluation:
    """Accuracy at threshold 0.5 plus every probability.  ``labels`` are
    class names or 0/1 values."""
    if expected_hash is not None and expected_hash != ck.config_hash:
        raise NetError(f"checkpoint hash {ck.config_hash} != expected {expected_hash}")
    labels = list(labels)
    if labels and isinstance(labels[0], str):
        y = binary_labels(labels, ck.labels[1], ck.labels[0])
    else:
        y = np.asarray(labels, dtype=np.int64)
    prob = predict_proba(ck.net, images, batch_size)
    acc = float(np.mean(classify(prob) == y)) if len(y) else float("nan")
    return Evaluation(acc, prob, y)
