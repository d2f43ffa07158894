"""Recurrent quadratic image enhancement.

Each iteration applies x <- x + a * (x^2 - x) pixelwise, with the same
curve-parameter map reused at every step. For x in [0, 1] and a in [-1, 1]
every iterate stays inside [0, 1] (a = -1 gives 1 - (1 - x)^2, a = +1 gives
x^2, and the map is monotone in a between those extremes), so no clamping
happens between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .network import CurveMap
from .tensor import Tensor

DEFAULT_ITERATIONS = 8


@dataclass(frozen=True)
class EnhanceSpec:
    iterations: int = DEFAULT_ITERATIONS
    clamp_output: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def _curve_tensor(curves: Union[CurveMap, Tensor]) -> Tensor:
    return curves.values if isinstance(curves, CurveMap) else curves


def _validate(image: Tensor, a: Tensor) -> None:
    if image.shape != a.shape:
        raise ValueError(
            f"enhance: image shape {image.shape} does not match curve map shape {a.shape}"
        )
    if image.data.size and (image.data.min() < 0.0 or image.data.max() > 1.0):
        raise ValueError("enhance: image values must lie in [0, 1]")
    if a.data.size and (a.data.min() < -1.0 or a.data.max() > 1.0):
        raise ValueError("enhance: curve parameters must lie in [-1, 1]")


def _step(x: Tensor, a: Tensor) -> Tensor:
    return x + a * (x.square() - x)


def enhance(image: Tensor, curves: Union[CurveMap, Tensor], spec: EnhanceSpec = EnhanceSpec()) -> Tensor:
    """Apply the quadratic curve `spec.iterations` times.

    With clamp_output the result is clipped to [0, 1] and detached from the
    gradient history; that mode is for export, not training.
    """
    a = _curve_tensor(curves)
    _validate(image, a)
    x = image
    for _ in range(spec.iterations):
        x = _step(x, a)
    if spec.clamp_output:
        return Tensor(np.clip(x.data, 0.0, 1.0))
    return x


def enhance_trace(
    image: Tensor, curves: Union[CurveMap, Tensor], spec: EnhanceSpec = EnhanceSpec()
) -> list[Tensor]:
    """Like enhance, but returns [x_0, x_1, ..., x_n] for inspection."""
    a = _curve_tensor(curves)
    _validate(image, a)
    trace = [image]
    for _ in range(spec.iterations):
        trace.append(_step(trace[-1], a))
    if spec.clamp_output:
        trace[-1] = Tensor(np.clip(trace[-1].data, 0.0, 1.0))
    return trace
