"""Building blocks of the curve-estimation network.

Depthwise and pointwise convolutions, their separable composition, spatial
attention, bilinear resampling, non-overlapping average pooling, and channel
concatenation/slicing. All ops are differentiable primitives registered on
the tensor engine; all are pure functions over immutable inputs.

Every 3x3 convolution in this toolkit runs with stride 1; strided and
dilated convolutions are out of scope. Kernel layout is depthwise
C x 1 x K x K, pointwise C_out x C_in x 1 x 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, from_op, relu, sigmoid, tanh


@dataclass
class ConvParams:
    """Kernel, optional bias, and geometry of one convolution."""

    kernel: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0

    def param_count(self) -> int:
        n = self.kernel.size
        if self.bias is not None:
            n += self.bias.size
        return n


@dataclass
class SpatialAttentionParams:
    """1x1 projection to C' channels plus 1x1 reduction to one attention map."""

    project: ConvParams
    attend: ConvParams


def _check_conv_common(p: ConvParams, op: str) -> None:
    if p.kernel.data.ndim != 4:
        raise ValueError(f"{op}: kernel must be rank 4, got shape {p.kernel.shape}")
    if p.stride != 1:
        raise ValueError(f"{op}: only stride 1 is supported, got {p.stride}")
    if p.padding < 0:
        raise ValueError(f"{op}: negative padding {p.padding}")


def depthwise_conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Per-channel 2D convolution: output channel c sees only input channel c."""
    _check_conv_common(p, "depthwise_conv2d")
    c, one, kh, kw = p.kernel.shape
    if one != 1:
        raise ValueError(f"depthwise_conv2d: kernel second extent must be 1, got {one}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"depthwise_conv2d: kernel must be odd and square, got {kh}x{kw}")
    if x.data.ndim != 3 or x.shape[0] != c:
        raise ValueError(
            f"depthwise_conv2d: input shape {x.shape} does not match kernel channels {c}"
        )
    pad = p.padding
    _, h, w = x.shape
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"depthwise_conv2d: input {h}x{w} too small for kernel {kh} pad {pad}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    k = p.kernel.data
    out = np.zeros((c, ho, wo), dtype=xp.dtype)
    # Fixed (u, v) accumulation order keeps results reproducible bit-for-bit.
    for u in range(kh):
        for v in range(kw):
            out += k[:, 0, u, v][:, None, None] * xp[:, u : u + ho, v : v + wo]
    if p.bias is not None:
        out += p.bias.data[:, None, None]

    def rule(g):
        gx = gk = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, u : u + ho, v : v + wo] += k[:, 0, u, v][:, None, None] * g
            gx = gxp[:, pad : pad + h, pad : pad + w] if pad else gxp
        if p.kernel.requires_grad:
            gk = np.zeros_like(k)
            for u in range(kh):
                for v in range(kw):
                    gk[:, 0, u, v] = (g * xp[:, u : u + ho, v : v + wo]).sum(axis=(1, 2))
        if p.bias is not None and p.bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return gx, gk, gb

    parents = (x, p.kernel) + ((p.bias,) if p.bias is not None else ())
    if p.bias is None:
        return from_op(out, parents, lambda g: rule(g)[:2])
    return from_op(out, parents, rule)


def pointwise_conv2d(y: Tensor, p: ConvParams) -> Tensor:
    """1x1 convolution: every pixel becomes a linear mix of its channels."""
    _check_conv_common(p, "pointwise_conv2d")
    c_out, c_in, kh, kw = p.kernel.shape
    if (kh, kw) != (1, 1):
        raise ValueError(f"pointwise_conv2d: kernel must be 1x1, got {kh}x{kw}")
    if p.padding != 0:
        raise ValueError("pointwise_conv2d: padding is meaningless for 1x1 kernels")
    if y.data.ndim != 3 or y.shape[0] != c_in:
        raise ValueError(
            f"pointwise_conv2d: input shape {y.shape} does not match kernel input channels {c_in}"
        )
    k2 = p.kernel.data[:, :, 0, 0]
    # optimize=False keeps einsum's plain ascending-index accumulation, which
    # the nested-loop oracle tests rely on for bitwise equality.
    out = np.einsum("oc,chw->ohw", k2, y.data, optimize=False)
    if p.bias is not None:
        out += p.bias.data[:, None, None]

    def rule(g):
        gy = gk = gb = None
        if y.requires_grad:
            gy = np.einsum("oc,ohw->chw", k2, g, optimize=False)
        if p.kernel.requires_grad:
            gk = np.einsum("ohw,chw->oc", g, y.data, optimize=False)[:, :, None, None]
        if p.bias is not None and p.bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return gy, gk, gb

    parents = (y, p.kernel) + ((p.bias,) if p.bias is not None else ())
    if p.bias is None:
        return from_op(out, parents, lambda g: rule(g)[:2])
    return from_op(out, parents, rule)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "none": lambda t: t}


def dsc_forward(x: Tensor, depthwise: ConvParams, pointwise: ConvParams, activation: str) -> Tensor:
    """Depthwise-separable layer: activation(pointwise(depthwise(x)))."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"dsc_forward: unknown activation {activation!r}")
    return _ACTIVATIONS[activation](pointwise_conv2d(depthwise_conv2d(x, depthwise), pointwise))


def spatial_attention_forward(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Project, score, squash, and reweight: O = F * sigmoid(attend(F)).

    The single-channel attention map is broadcast across all projected
    channels; its values always lie strictly inside (0, 1).
    """
    if p.attend.kernel.shape[0] != 1:
        raise ValueError(
            f"spatial_attention_forward: attend kernel must emit 1 channel, "
            f"got {p.attend.kernel.shape[0]}"
        )
    feats = pointwise_conv2d(x, p.project)
    scores = pointwise_conv2d(feats, p.attend)
    gate = sigmoid(scores)
    return feats * gate


def _resize_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center convention (corners not aligned); exact identity
    # when n_out == n_in.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(x: Tensor, target: tuple[int, int]) -> Tensor:
    """Bilinear resampling of a CxHxW tensor to the target spatial extents."""
    h2, w2 = int(target[0]), int(target[1])
    if h2 < 1 or w2 < 1:
        raise ValueError(f"resize_bilinear: target extents must be >= 1, got {(h2, w2)}")
    if x.data.ndim != 3:
        raise ValueError(f"resize_bilinear: expected CxHxW input, got shape {x.shape}")
    _, h, w = x.shape
    i0, i1, wi = _resize_coords(h, h2)
    j0, j1, wj = _resize_coords(w, w2)

    rows = x.data[:, i0, :] * (1.0 - wi)[None, :, None] + x.data[:, i1, :] * wi[None, :, None]
    out = rows[:, :, j0] * (1.0 - wj) + rows[:, :, j1] * wj

    def rule(g):
        grows = np.zeros((x.shape[0], h2, w), dtype=g.dtype)
        np.add.at(grows, (slice(None), slice(None), j0), g * (1.0 - wj))
        np.add.at(grows, (slice(None), slice(None), j1), g * wj)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), i0), grows * (1.0 - wi)[None, :, None])
        np.add.at(gx, (slice(None), i1), grows * wi[None, :, None])
        return (gx,)

    return from_op(out, (x,), rule)


def avg_pool(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Non-overlapping window means; trailing partial windows are dropped."""
    if stride is None:
        stride = window
    if stride != window:
        raise ValueError(f"avg_pool: only stride == window is supported, got {stride} != {window}")
    if window < 1:
        raise ValueError(f"avg_pool: window must be >= 1, got {window}")
    if x.data.ndim != 3:
        raise ValueError(f"avg_pool: expected CxHxW input, got shape {x.shape}")
    c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"avg_pool: window {window} larger than input {h}x{w}")
    ho, wo = h // window, w // window
    cropped = x.data[:, : ho * window, : wo * window]
    out = cropped.reshape(c, ho, window, wo, window).mean(axis=(2, 4))

    def rule(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        spread = np.repeat(np.repeat(g, window, axis=1), window, axis=2) / (window * window)
        gx[:, : ho * window, : wo * window] = spread
        return (gx,)

    return from_op(out, (x,), rule)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along the channel axis, preserving order."""
    if not parts:
        raise ValueError("concat_channels: need at least one tensor")
    hw = parts[0].shape[1:]
    for t in parts:
        if t.data.ndim != 3:
            raise ValueError(f"concat_channels: expected CxHxW inputs, got shape {t.shape}")
        if t.shape[1:] != hw:
            raise ValueError(
                f"concat_channels: spatial extents differ, {t.shape[1:]} vs {hw}"
            )
    out = np.concatenate([t.data for t in parts], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in parts])

    def rule(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return from_op(out, tuple(parts), rule)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """View of channels [start, stop); the gradient scatters back in place."""
    if x.data.ndim != 3:
        raise ValueError(f"slice_channels: expected CxHxW input, got shape {x.shape}")
    c = x.shape[0]
    if not (0 <= start < stop <= c):
        raise ValueError(f"slice_channels: bad range [{start}, {stop}) for {c} channels")

    def rule(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return from_op(x.data[start:stop].copy(), (x,), rule)
