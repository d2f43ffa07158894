"""Multi-scale curve-estimation network.

Three weight-independent branches of depthwise-separable layers process the
input at full, half, and quarter resolution. The coarser branch outputs are
upsampled back to full resolution and fused through two more separable
layers, the fused features pass through a spatial-attention block, and a
final tanh projection emits one curve-parameter map per color channel with
values in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .blocks import (
    ConvParams,
    SpatialAttentionParams,
    concat_channels,
    dsc_forward,
    resize_bilinear,
    spatial_attention_forward,
)
from .tensor import Tensor

KERNEL_SIZE = 3
OUTPUT_CHANNELS = 3
SCALE_FACTORS = (1, 2, 4)


@dataclass
class CurveNetConfig:
    """Architecture hyperparameters.

    attention_width is the projected channel count inside the attention
    block; when omitted it defaults to twice the branch width, matching the
    channel count of the fused features.
    """

    branch_layers: int = 3
    width: int = 32
    attention_width: Optional[int] = None
    iterations: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.branch_layers < 1:
            raise ValueError(f"branch_layers must be >= 1, got {self.branch_layers}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.attention_width is not None and self.attention_width < 1:
            raise ValueError(f"attention_width must be >= 1, got {self.attention_width}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")

    @property
    def resolved_attention_width(self) -> int:
        return 2 * self.width if self.attention_width is None else self.attention_width


@dataclass
class DscLayer:
    depthwise: ConvParams
    pointwise: ConvParams


@dataclass
class CurveMap:
    """Per-pixel, per-channel curve parameters in [-1, 1]."""

    values: Tensor


@dataclass
class LayerSummary:
    name: str
    detail: str
    params: int


@dataclass
class ArchitectureSummary:
    rows: list[LayerSummary]
    total_params: int

    def format_table(self) -> str:
        name_w = max(len(r.name) for r in self.rows)
        detail_w = max(len(r.detail) for r in self.rows)
        lines = [f"{'layer':<{name_w}}  {'shape':<{detail_w}}  params"]
        for r in self.rows:
            lines.append(f"{r.name:<{name_w}}  {r.detail:<{detail_w}}  {r.params}")
        lines.append(f"total parameters: {self.total_params}")
        return "\n".join(lines)


@dataclass
class CurveNet:
    config: CurveNetConfig
    branches: list[list[DscLayer]] = field(default_factory=list)
    fuse_half: Optional[DscLayer] = None
    fuse_quarter: Optional[DscLayer] = None
    attention: Optional[SpatialAttentionParams] = None
    final: Optional[DscLayer] = None

    def parameters(self) -> list[tuple[str, Tensor]]:
        """All trainable tensors in a fixed, name-stable order."""
        return list(self._named())

    def _named(self) -> Iterator[tuple[str, Tensor]]:
        for b, branch in enumerate(self.branches):
            for i, layer in enumerate(branch):
                yield from _named_layer(f"branch{b}.layer{i}", layer)
        yield from _named_layer("fuse_half", self.fuse_half)
        yield from _named_layer("fuse_quarter", self.fuse_quarter)
        yield "attention.project.kernel", self.attention.project.kernel
        yield "attention.project.bias", self.attention.project.bias
        yield "attention.attend.kernel", self.attention.attend.kernel
        yield "attention.attend.bias", self.attention.attend.bias
        yield from _named_layer("final", self.final)


def _named_layer(prefix: str, layer: DscLayer) -> Iterator[tuple[str, Tensor]]:
    yield f"{prefix}.depthwise.kernel", layer.depthwise.kernel
    yield f"{prefix}.depthwise.bias", layer.depthwise.bias
    yield f"{prefix}.pointwise.kernel", layer.pointwise.kernel
    yield f"{prefix}.pointwise.bias", layer.pointwise.bias


def _init_kernel(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return Tensor(data, requires_grad=True)


def _init_dsc(rng: np.random.Generator, c_in: int, c_out: int) -> DscLayer:
    k = KERNEL_SIZE
    dw_kernel = _init_kernel(rng, (c_in, 1, k, k), fan_in=k * k)
    dw_bias = Tensor(np.zeros(c_in), requires_grad=True)
    pw_kernel = _init_kernel(rng, (c_out, c_in, 1, 1), fan_in=c_in)
    pw_bias = Tensor(np.zeros(c_out), requires_grad=True)
    return DscLayer(
        depthwise=ConvParams(dw_kernel, dw_bias, padding=k // 2),
        pointwise=ConvParams(pw_kernel, pw_bias),
    )


def build(config: CurveNetConfig) -> CurveNet:
    """Construct and initialise a network; same config, same bits."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    w = config.width
    cp = config.resolved_attention_width

    net = CurveNet(config=config)
    for _ in SCALE_FACTORS:
        branch = []
        c_in = OUTPUT_CHANNELS
        for _ in range(config.branch_layers):
            branch.append(_init_dsc(rng, c_in, w))
            c_in = w
        net.branches.append(branch)
    net.fuse_half = _init_dsc(rng, 2 * w, w)
    net.fuse_quarter = _init_dsc(rng, 2 * w, w)
    net.attention = SpatialAttentionParams(
        project=ConvParams(
            _init_kernel(rng, (cp, 2 * w, 1, 1), fan_in=2 * w),
            Tensor(np.zeros(cp), requires_grad=True),
        ),
        attend=ConvParams(
            _init_kernel(rng, (1, cp, 1, 1), fan_in=cp),
            Tensor(np.zeros(1), requires_grad=True),
        ),
    )
    net.final = _init_dsc(rng, cp, OUTPUT_CHANNELS)
    return net


def _run_branch(x: Tensor, branch: list[DscLayer]) -> Tensor:
    out = x
    for layer in branch:
        out = dsc_forward(out, layer.depthwise, layer.pointwise, "relu")
    return out


def forward(net: CurveNet, image: Tensor) -> CurveMap:
    """Estimate a curve-parameter map for one 3xHxW image in [0, 1]."""
    if image.data.ndim != 3 or image.shape[0] != OUTPUT_CHANNELS:
        raise ValueError(f"forward: expected 3xHxW input, got shape {image.shape}")
    _, h, w = image.shape
    if h < 4 or w < 4:
        raise ValueError(f"forward: spatial extents must be >= 4, got {h}x{w}")

    half = resize_bilinear(image, (h // 2, w // 2))
    quarter = resize_bilinear(image, (h // 4, w // 4))

    d_full = _run_branch(image, net.branches[0])
    d_half = _run_branch(half, net.branches[1])
    d_quarter = _run_branch(quarter, net.branches[2])

    f_half = dsc_forward(
        concat_channels([d_full, resize_bilinear(d_half, (h, w))]),
        net.fuse_half.depthwise,
        net.fuse_half.pointwise,
        "relu",
    )
    f_quarter = dsc_forward(
        concat_channels([f_half, resize_bilinear(d_quarter, (h, w))]),
        net.fuse_quarter.depthwise,
        net.fuse_quarter.pointwise,
        "relu",
    )
    fused = concat_channels([f_half, f_quarter])
    attended = spatial_attention_forward(fused, net.attention)
    curves = dsc_forward(attended, net.final.depthwise, net.final.pointwise, "tanh")
    return CurveMap(values=curves)


def describe(net: CurveNet) -> ArchitectureSummary:
    """Per-layer parameter census; the total matches parameters() exactly."""
    rows: list[LayerSummary] = []
    grouped: dict[str, int] = {}
    order: list[str] = []
    shapes: dict[str, list[str]] = {}
    for name, t in net.parameters():
        group = name.rsplit(".", 1)[0].rsplit(".", 1)[0] if name.count(".") > 1 else name.split(".")[0]
        if group not in grouped:
            grouped[group] = 0
            shapes[group] = []
            order.append(group)
        grouped[group] += t.size
        if name.endswith("kernel"):
            shapes[group].append("x".join(str(e) for e in t.shape))
    for group in order:
        rows.append(LayerSummary(name=group, detail=" + ".join(shapes[group]), params=grouped[group]))
    total = sum(r.params for r in rows)
    return ArchitectureSummary(rows=rows, total_params=total)
