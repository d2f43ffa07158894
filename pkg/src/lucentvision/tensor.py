"""Dense float tensors with reverse-mode automatic differentiation.

Every numeric operation in this toolkit runs through :class:`Tensor`. Ops
record a dynamic history: the output tensor keeps references to its parents
plus a rule mapping the output gradient back to parent gradients, and
:func:`backward` replays that history in reverse topological order.

Conventions:

- Layout is channels x height x width (an optional leading batch extent is
  allowed by the shape rules but the network paths here work per image).
- Tensors are float64 by default; float32 buffers are accepted and kept.
  Tests and gradient checks always run in float64.
- A tensor is immutable once it participates in a recorded operation.
  Rebinding ``.data`` on a leaf between training steps is fine because each
  step builds a fresh history. A recorded history belongs to one thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

Number = Union[int, float]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional float array, optionally tracking gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Optional[Callable[[np.ndarray], tuple]] = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same buffer with no history and no gradient."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # Arithmetic sugar; the named functions below are the real surface.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def square(self) -> "Tensor":
        return square(self)

    def sum(self, axes=None) -> "Tensor":
        return tensor_sum(self, axes)

    def mean(self, axes=None) -> "Tensor":
        return tensor_mean(self, axes)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def from_op(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap an op result, recording history when any parent tracks gradients.

    ``grad_fn(g)`` must return one gradient array (or None) per parent, each
    matching that parent's shape. Other modules use this hook to define
    their own differentiable primitives (convolutions, resampling, ...).
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    # Equal shapes, a single-element operand, or channel-style broadcast
    # (extent-1 axes); anything numpy cannot broadcast is rejected.
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} do not align") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return from_op(a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return from_op(ad * bd, (a, b), rule)


def square(a) -> Tensor:
    a = _coerce(a)
    ad = a.data

    def rule(g):
        return (g * (2.0 * ad),)

    return from_op(ad * ad, (a,), rule)


def tanh(a) -> Tensor:
    a = _coerce(a)
    y = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - y * y),)

    return from_op(y, (a,), rule)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    # Split by sign so neither exp() overflows.
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def rule(g):
        return (g * y * (1.0 - y),)

    return from_op(y, (a,), rule)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0

    def rule(g):
        return (g * mask,)

    return from_op(np.where(mask, a.data, 0.0), (a,), rule)


def sqrt(a) -> Tensor:
    """Elementwise square root; inputs must be non-negative.

    The derivative at exactly zero is taken as 0 (the subgradient at the
    term's minimum), which keeps losses like the color-balance penalty
    stable on already-perfect inputs.
    """
    a = _coerce(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(a.data)

    def rule(g):
        out = np.zeros_like(y)
        np.divide(g, 2.0 * y, out=out, where=y > 0)
        return (out,)

    return from_op(y, (a,), rule)


def _normalize_axes(axes, ndim: int) -> Optional[tuple[int, ...]]:
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    norm = []
    for ax in axes:
        if not isinstance(ax, (int, np.integer)):
            raise ValueError(f"reduce: axis {ax!r} is not an integer")
        a = int(ax)
        if a < -ndim or a >= ndim:
            raise ValueError(f"reduce: axis {a} out of range for rank {ndim}")
        norm.append(a % ndim)
    if len(set(norm)) != len(norm):
        raise ValueError(f"reduce: duplicate axes in {tuple(axes)}")
    return tuple(sorted(norm))


def tensor_sum(a, axes=None) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axes, a.data.ndim)
    out = a.data.sum(axis=axes)

    def rule(g):
        gg = np.asarray(g)
        if axes is not None:
            for ax in axes:
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, a.shape).astype(a.data.dtype, copy=True),)

    return from_op(out, (a,), rule)


def tensor_mean(a, axes=None) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axes, a.data.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    out = a.data.mean(axis=axes)

    def rule(g):
        gg = np.asarray(g) / count
        if axes is not None:
            for ax in axes:
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, a.shape).astype(a.data.dtype, copy=True),)

    return from_op(out, (a,), rule)


_BINARY_KINDS = {"add": add, "sub": sub, "mul": mul}
_UNARY_KINDS = {"square": square, "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "sqrt": sqrt}
_REDUCE_KINDS = {"sum": tensor_sum, "mean": tensor_mean}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name; unknown names are rejected."""
    if kind in _BINARY_KINDS:
        if b is None:
            raise ValueError(f"elementwise: {kind!r} needs two operands")
        return _BINARY_KINDS[kind](a, b)
    if kind in _UNARY_KINDS:
        if b is not None:
            raise ValueError(f"elementwise: {kind!r} takes a single operand")
        return _UNARY_KINDS[kind](a)
    raise ValueError(f"elementwise: unknown op-kind {kind!r}")


def reduce(kind: str, a, axes=None) -> Tensor:
    """Dispatch a reduction by name; unknown names are rejected."""
    if kind not in _REDUCE_KINDS:
        raise ValueError(f"reduce: unknown op-kind {kind!r}")
    return _REDUCE_KINDS[kind](a, axes)


def _topo_order(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-tracking tensor behind ``loss``.

    The recorded history is single-use: running backward twice over the
    same ops raises, since the buffers it captured may have been rebound.
    Leaf gradients accumulate across independent histories until cleared.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._grad_fn is not None and node._spent:
            raise RuntimeError(
                "backward: this history was already consumed; rebuild the graph before rerunning"
            )

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        node._spent = True
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


@dataclass
class GradCheckReport:
    """Outcome of an analytic-vs-central-difference gradient comparison."""

    max_rel_error: float
    worst_index: tuple[int, ...]
    tol: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-3,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() gradients of ``f`` at ``x`` against central differences.

    ``f`` must map a tensor to a scalar tensor and be deterministic. The
    relative error per element is |analytic - numeric| over
    max(|analytic|, |numeric|, 1e-6); the check passes iff the maximum is
    below ``tol``. Runs in float64 regardless of the input dtype.
    """
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    backward(out)
    analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xp[idx] += h
        xm = x0.copy()
        xm[idx] -= h
        fp = f(Tensor(xp)).item()
        fm = f(Tensor(xm)).item()
        numeric[idx] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), tol, True, analytic, numeric)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.ndim else ()
    max_err = float(rel.max())
    return GradCheckReport(max_err, tuple(int(i) for i in worst), tol, max_err < tol, analytic, numeric)
