"""Zero-shot training loop, Adam with decoupled weight decay, checkpoints.

One training step builds a fresh gradient history per image in the batch,
averages the composite losses, clips the global gradient norm, and applies
one Adam update. Shuffling is seeded per epoch from (seed, epoch), so a
resumed run visits images in the same order the uninterrupted run would.

Checkpoints use a little-endian binary layout:

    magic b"LVNC" | u32 format version | u32 metadata length |
    metadata (UTF-8 "key=value" lines) | u32 tensor count |
    per tensor: u16 name length | name | u8 dtype tag (1=f64, 2=f32) |
    u8 rank | u32 extents | raw element bytes

The same bytes always decode to the same tensors; writing is deterministic
given the network and optimizer state.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import imaging
from .blocks import resize_bilinear
from .enhancer import EnhanceSpec, enhance
from .losses import ExposureTarget, LossWeights, QualityPlugin, composite_loss
from .network import CurveNet, CurveNetConfig, build, forward
from .tensor import Tensor, backward

CHECKPOINT_MAGIC = b"LVNC"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f8"), 2: np.dtype("<f4")}


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Format version is newer than this reader understands."""


class CheckpointTruncatedError(CheckpointError):
    """File ends in the middle of a record."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    grad_clip_norm: float = 0.1
    epochs: int = 1
    max_steps: Optional[int] = None
    batch_size: int = 1
    image_size: int = 512
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    exposure: ExposureTarget = field(default_factory=ExposureTarget)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip_norm <= 0:
            raise ValueError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size < 4:
            raise ValueError(f"image_size must be >= 4, got {self.image_size}")


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the shared step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_net(cls, net: CurveNet) -> "AdamState":
        state = cls()
        for name, p in net.parameters():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def global_grad_norm(grads: Sequence[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by one factor so their global norm is <= max_norm."""
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


def adam_step(
    params: Sequence[tuple[str, Tensor]],
    grads: Sequence[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One Adam update with decoupled weight decay, in place on the leaves."""
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} gradients")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for (name, p), g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam_step: non-finite gradient for parameter {name!r}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + config.epsilon)
        p.data = p.data - config.learning_rate * (update + config.weight_decay * p.data)


@dataclass
class StepRecord:
    step: int
    epoch: int
    total: float
    grad_norm: float
    tv: float
    spa: float
    color: float
    exposure: float
    seg: float
    nr: float


@dataclass
class TrainResult:
    net: CurveNet
    state: AdamState
    history: list[StepRecord]
    epochs_completed: int


CorpusItem = Union[str, Path, np.ndarray, Tensor]


def _load_corpus(corpus, image_size: int) -> list[np.ndarray]:
    if isinstance(corpus, (str, Path)):
        items: Sequence[CorpusItem] = imaging.scan_corpus(corpus)
    else:
        items = list(corpus)
    if not items:
        raise ValueError("train: the corpus is empty")
    loaded: list[np.ndarray] = []
    for item in items:
        if isinstance(item, (str, Path)):
            try:
                unit = imaging.to_unit(imaging.load_image(item))
            except (OSError, ValueError) as exc:
                warnings.warn(f"skipping {item}: {exc}", stacklevel=2)
                continue
        else:
            data = item.data if isinstance(item, Tensor) else np.asarray(item, dtype=np.float64)
            if data.ndim != 3 or data.shape[0] != 3:
                raise ValueError(f"train: corpus arrays must be 3xHxW, got shape {data.shape}")
            unit = Tensor(data)
        if unit.shape[1:] != (image_size, image_size):
            unit = resize_bilinear(unit, (image_size, image_size))
        loaded.append(unit.data)
    if not loaded:
        raise ValueError("train: no corpus image could be decoded")
    return loaded


def train(
    net: CurveNet,
    corpus,
    config: TrainConfig,
    state: Optional[AdamState] = None,
    start_epoch: int = 0,
    seg_plugin: Optional[QualityPlugin] = None,
    nr_plugin: Optional[QualityPlugin] = None,
) -> TrainResult:
    """Optimize the curve network on a corpus of unlabeled images.

    ``corpus`` may be a directory, a sequence of file paths, or a sequence
    of 3xHxW arrays/tensors in [0, 1]. Undecodable files are skipped with a
    warning; an effectively empty corpus is an error.
    """
    images = _load_corpus(corpus, config.image_size)
    if state is None:
        state = AdamState.for_net(net)
    params = net.parameters()
    spec = EnhanceSpec(iterations=net.config.iterations, clamp_output=False)
    history: list[StepRecord] = []
    epoch = start_epoch

    for epoch in range(start_epoch, start_epoch + config.epochs):
        rng = np.random.Generator(np.random.PCG64((config.seed, epoch)))
        order = rng.permutation(len(images))
        for lo in range(0, len(order), config.batch_size):
            if config.max_steps is not None and state.step >= config.max_steps:
                return TrainResult(net, state, history, epochs_completed=epoch)
            batch = [images[i] for i in order[lo : lo + config.batch_size]]
            for _, p in params:
                p.zero_grad()
            total = None
            sums = {"tv": 0.0, "spa": 0.0, "color": 0.0, "exposure": 0.0, "seg": 0.0, "nr": 0.0}
            for img in batch:
                x = Tensor(img)
                curves = forward(net, x)
                enhanced = enhance(x, curves, spec)
                loss, breakdown = composite_loss(
                    x,
                    enhanced,
                    curves,
                    weights=config.weights,
                    exposure_target=config.exposure,
                    seg_plugin=seg_plugin,
                    nr_plugin=nr_plugin,
                )
                total = loss if total is None else total + loss
                for key in sums:
                    sums[key] += breakdown[key]
            mean_loss = total * (1.0 / len(batch))
            backward(mean_loss)
            grads = [
                p.grad if p.grad is not None else np.zeros_like(p.data) for _, p in params
            ]
            clipped, raw_norm = clip_gradients(grads, config.grad_clip_norm)
            adam_step(params, clipped, state, config)
            history.append(
                StepRecord(
                    step=state.step,
                    epoch=epoch,
                    total=mean_loss.item(),
                    grad_norm=raw_norm,
                    **{k: s / len(batch) for k, s in sums.items()},
                )
            )
    return TrainResult(net, state, history, epochs_completed=epoch + 1)


def history_csv(history: Sequence[StepRecord]) -> str:
    lines = ["step,epoch,total,grad_norm,tv,spa,color,exposure,seg,nr"]
    for r in history:
        lines.append(
            f"{r.step},{r.epoch},{r.total:.9g},{r.grad_norm:.9g},{r.tv:.9g},"
            f"{r.spa:.9g},{r.color:.9g},{r.exposure:.9g},{r.seg:.9g},{r.nr:.9g}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class Checkpoint:
    version: int
    metadata: dict[str, str]
    tensors: dict[str, np.ndarray]

    @property
    def net_config(self) -> CurveNetConfig:
        md = self.metadata
        return CurveNetConfig(
            branch_layers=int(md["branch_layers"]),
            width=int(md["width"]),
            attention_width=int(md["attention_width"]),
            iterations=int(md["iterations"]),
            seed=int(md["net_seed"]),
        )

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", "0"))

    @property
    def epoch(self) -> int:
        return int(self.metadata.get("epoch", "0"))


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype == np.float64:
        tag, coded = 1, arr.astype("<f8", copy=False)
    elif arr.dtype == np.float32:
        tag, coded = 2, arr.astype("<f4", copy=False)
    else:
        raise ValueError(f"checkpoint: tensor {name!r} has unsupported dtype {arr.dtype}")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", tag, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + dims + coded.tobytes()


def save_checkpoint(
    net: CurveNet,
    state: AdamState,
    path: Union[str, Path],
    epoch: int = 0,
    train_seed: int = 0,
) -> None:
    """Serialize network parameters, optimizer moments, and run counters."""
    cfg = net.config
    metadata = {
        "branch_layers": str(cfg.branch_layers),
        "width": str(cfg.width),
        "attention_width": str(cfg.resolved_attention_width),
        "iterations": str(cfg.iterations),
        "net_seed": str(cfg.seed),
        "step": str(state.step),
        "epoch": str(epoch),
        "train_seed": str(train_seed),
    }
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in net.parameters():
        tensors.append((name, p.data))
        tensors.append((f"adam.m.{name}", state.m[name]))
        tensors.append((f"adam.v.{name}", state.v[name]))

    md_blob = "".join(f"{k}={v}\n" for k, v in metadata.items()).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(md_blob)),
        md_blob,
        struct.pack("<I", len(tensors)),
    ]
    parts.extend(_encode_tensor(name, arr) for name, arr in tensors)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"checkpoint: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Parse a checkpoint file; malformed files raise a CheckpointError subclass."""
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    md_blob = r.take(r.u32())
    metadata: dict[str, str] = {}
    for line in md_blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        tag = r.u8()
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n_elems = int(np.prod(shape, dtype=np.int64)) if rank else 1
        dt = _DTYPE_TAGS[tag]
        raw = r.take(n_elems * dt.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.base, copy=True)
    if r.pos != len(blob):
        raise CheckpointTruncatedError(f"{path}: {len(blob) - r.pos} trailing bytes after records")
    return Checkpoint(version=version, metadata=metadata, tensors=tensors)


def restore(checkpoint: Checkpoint) -> tuple[CurveNet, AdamState]:
    """Rebuild a network and optimizer state from a parsed checkpoint."""
    net = build(checkpoint.net_config)
    state = AdamState(step=checkpoint.step)
    for name, p in net.parameters():
        for kind, store in (("", None), ("adam.m.", state.m), ("adam.v.", state.v)):
            key = f"{kind}{name}"
            if key not in checkpoint.tensors:
                raise CheckpointTruncatedError(f"checkpoint: missing tensor {key!r}")
            arr = checkpoint.tensors[key]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"checkpoint: tensor {key!r} has shape {arr.shape}, expected {p.data.shape}"
                )
            if store is None:
                p.data = arr.copy()
            else:
                store[name] = arr.copy()
    return net, state
