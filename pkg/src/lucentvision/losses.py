"""No-reference training objective.

Four measurable priors replace ground truth: curve maps should vary
smoothly (total variation), local contrast structure should survive
enhancement (spatial consistency), channel means should stay balanced
(color constancy), and local brightness should sit near a target exposure.
Two optional plugin hooks add task losses on top; when absent they
contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .blocks import ConvParams, avg_pool, depthwise_conv2d, slice_channels
from .network import CurveMap
from .tensor import Tensor, from_op, sqrt, tensor_mean, tensor_sum

# A plugin maps an enhanced 3xHxW image to a differentiable scalar tensor.
# Segmentation-style plugins return a loss (lower is better, >= 0); quality
# scorers return a score in [0, 100] (higher is better) which the composite
# flips into 100 - score.
QualityPlugin = Callable[[Tensor], Tensor]

DEFAULT_EXPOSURE_LEVEL = 0.6
DEFAULT_EXPOSURE_PATCH = 16


@dataclass(frozen=True)
class LossWeights:
    tv: float = 1600.0
    spa: float = 1.0
    color: float = 5.0
    exposure: float = 10.0
    seg: float = 0.1
    nr: float = 0.1

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")

    def as_dict(self) -> dict[str, float]:
        return {
            "tv": self.tv,
            "spa": self.spa,
            "color": self.color,
            "exposure": self.exposure,
            "seg": self.seg,
            "nr": self.nr,
        }


@dataclass(frozen=True)
class ExposureTarget:
    level: float = DEFAULT_EXPOSURE_LEVEL
    patch: int = DEFAULT_EXPOSURE_PATCH

    def __post_init__(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"exposure level must lie in (0, 1), got {self.level}")
        if self.patch < 1:
            raise ValueError(f"exposure patch must be >= 1, got {self.patch}")


def _values(curves: Union[CurveMap, Tensor]) -> Tensor:
    return curves.values if isinstance(curves, CurveMap) else curves


def _forward_diff(t: Tensor, axis: int) -> Tensor:
    """Differences between spatially adjacent elements along one axis."""
    out = np.diff(t.data, axis=axis)

    def rule(g):
        gx = np.zeros(t.shape, dtype=g.dtype)
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[axis] = slice(1, None)
        lo[axis] = slice(0, -1)
        gx[tuple(hi)] += g
        gx[tuple(lo)] -= g
        return (gx,)

    return from_op(out, (t,), rule)


def tv_loss(curves: Union[CurveMap, Tensor]) -> Tensor:
    """Mean squared difference between neighboring curve parameters.

    Normalized by the number of contributing difference terms, so maps with
    only one spatial axis still have a defined value; a 1x1 map has no
    neighbors at all and is rejected.
    """
    a = _values(curves)
    if a.data.ndim != 3:
        raise ValueError(f"tv_loss: expected CxHxW input, got shape {a.shape}")
    c, h, w = a.shape
    if h == 1 and w == 1:
        raise ValueError("tv_loss: map has no neighboring elements")
    n_h = c * h * (w - 1)
    n_v = c * (h - 1) * w
    total = None
    if w > 1:
        total = tensor_sum(_forward_diff(a, 2).square())
    if h > 1:
        v = tensor_sum(_forward_diff(a, 1).square())
        total = v if total is None else total + v
    return total * (1.0 / (n_h + n_v))


def _gray(image: Tensor) -> Tensor:
    """Channel-mean intensity as a 1xHxW tensor."""
    if image.data.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected 3xHxW image, got shape {image.shape}")
    r = slice_channels(image, 0, 1)
    g = slice_channels(image, 1, 2)
    b = slice_channels(image, 2, 3)
    return (r + g + b) * (1.0 / 3.0)

# Directional difference stencils: each 3x3 kernel subtracts one neighbor
# of the center cell, applied without padding so borders never fabricate
# gradients against zeros.
_DIRECTION_OFFSETS = {"left": (1, 0), "right": (1, 2), "up": (0, 1), "down": (2, 1)}


def _direction_kernel(offset: tuple[int, int]) -> ConvParams:
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    k[0, 0, offset[0], offset[1]] = -1.0
    return ConvParams(Tensor(k), padding=0)


_DIRECTION_KERNELS = {name: _direction_kernel(off) for name, off in _DIRECTION_OFFSETS.items()}
SPA_POOL_WINDOW = 4


def spatial_consistency_loss(enhanced: Tensor, original: Tensor) -> Tensor:
    """Penalize changes in pooled local-contrast structure.

    Both images are reduced to intensity, average-pooled 4x4, and compared
    through four directional neighbor differences; adding a constant to the
    whole image leaves this loss at zero.
    """
    if enhanced.shape != original.shape:
        raise ValueError(
            f"spatial_consistency_loss: shapes differ, {enhanced.shape} vs {original.shape}"
        )
    pooled_e = avg_pool(_gray(enhanced), SPA_POOL_WINDOW)
    pooled_o = avg_pool(_gray(original), SPA_POOL_WINDOW)
    _, ph, pw = pooled_e.shape
    if ph < 3 or pw < 3:
        raise ValueError(
            f"spatial_consistency_loss: pooled map {ph}x{pw} is smaller than the 3x3 stencil"
        )
    total = None
    for kernel in _DIRECTION_KERNELS.values():
        diff = depthwise_conv2d(pooled_e, kernel) - depthwise_conv2d(pooled_o, kernel)
        term = tensor_sum(diff.square())
        total = term if total is None else total + term
    n_positions = (ph - 2) * (pw - 2)
    return total * (1.0 / (4 * n_positions))


def color_constancy_loss(enhanced: Tensor) -> Tensor:
    """Distance between the three channel means (gray-world prior).

    Zero exactly when the means coincide; the square root's subgradient at
    zero is taken as zero so perfectly gray images train stably.
    """
    if enhanced.data.ndim != 3 or enhanced.shape[0] != 3:
        raise ValueError(f"color_constancy_loss: expected 3xHxW image, got shape {enhanced.shape}")
    r = tensor_mean(slice_channels(enhanced, 0, 1))
    g = tensor_mean(slice_channels(enhanced, 1, 2))
    b = tensor_mean(slice_channels(enhanced, 2, 3))
    return sqrt((r - g).square() + (r - b).square() + (g - b).square())


def exposure_loss(enhanced: Tensor, target: ExposureTarget = ExposureTarget()) -> Tensor:
    """Mean squared gap between patch-average intensity and the target level.

    The target is subtracted before the channel mean and the pooling (both
    are linear, so the value is the same); an image sitting exactly at the
    target then reduces exact zeros instead of picking up rounding from
    (3E)/3 != E and window summation.
    """
    gap = avg_pool(_gray(enhanced - target.level), target.patch)
    return tensor_mean(gap.square())


def toy_quality_probe(enhanced: Tensor) -> Tensor:
    """Tiny differentiable stand-in for an external no-reference scorer.

    Scores mid-gray images highest: 100 * mean(4 * x * (1 - x)) lies in
    [0, 100]. Purely a test fixture for the plugin seam; not a perceptual
    model of anything.
    """
    x = enhanced
    return tensor_mean(x * (x * (-1.0) + 1.0)) * 400.0


def composite_loss(
    original: Tensor,
    enhanced: Tensor,
    curves: Union[CurveMap, Tensor],
    weights: LossWeights = LossWeights(),
    exposure_target: ExposureTarget = ExposureTarget(),
    seg_plugin: Optional[QualityPlugin] = None,
    nr_plugin: Optional[QualityPlugin] = None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of all objective terms plus a raw per-term breakdown.

    The breakdown holds unweighted values; absent plugins report 0.0 and
    add exactly nothing to the total.
    """
    for name, value in weights.as_dict().items():
        if value < 0:
            raise ValueError(f"loss weight {name} must be >= 0, got {value}")

    term_tv = tv_loss(curves)
    term_spa = spatial_consistency_loss(enhanced, original)
    term_color = color_constancy_loss(enhanced)
    term_exposure = exposure_loss(enhanced, exposure_target)

    total = (
        term_tv * weights.tv
        + term_spa * weights.spa
        + term_color * weights.color
        + term_exposure * weights.exposure
    )
    breakdown = {
        "tv": term_tv.item(),
        "spa": term_spa.item(),
        "color": term_color.item(),
        "exposure": term_exposure.item(),
        "seg": 0.0,
        "nr": 0.0,
    }
    if seg_plugin is not None:
        term_seg = seg_plugin(enhanced)
        breakdown["seg"] = term_seg.item()
        total = total + term_seg * weights.seg
    if nr_plugin is not None:
        score = nr_plugin(enhanced)
        term_nr = score * (-1.0) + 100.0
        breakdown["nr"] = term_nr.item()
        total = total + term_nr * weights.nr
    return total, breakdown
