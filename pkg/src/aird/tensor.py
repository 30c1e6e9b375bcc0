"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its output with a monotonically increasing sequence
number; ``backward`` replays the closures of the nodes reachable from the
loss in reverse creation order, which is a valid reverse-topological order
because an operation is always created after its inputs. Gradients
accumulate additively, so a tensor consumed by several operations receives
the sum of all contributions.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, GraphError, NumericError

EPS_FLOOR = 1e-12

_SEQ = itertools.count()
_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, adaptation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the full set of ops lives at module level
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward) -> Tensor:
    """Wrap an op result; records the backward closure only when needed."""
    req = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def accumulate_grad(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor):
    """Populate ``grad`` for every tensor that influences the scalar loss."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t.grad is not None:
            t._backward(t.grad)


def assert_finite(t, name: str):
    """Check barrier: NaN/Inf never propagates silently past this point."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {name}")
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise DimensionError(f"incompatible shapes {a.data.shape} and {b.data.shape}")

    def bw(g):
        accumulate_grad(a, _unbroadcast(da(g, a.data, b.data), a.data.shape))
        accumulate_grad(b, _unbroadcast(db(g, a.data, b.data), b.data.shape))

    return make_op(data, (a, b), bw)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    """Division with the denominator clamped away from zero (by magnitude)."""

    def safe(y):
        return np.where(np.abs(y) >= EPS_FLOOR, y, np.where(y < 0, -EPS_FLOOR, EPS_FLOOR))

    return _binary(
        a,
        b,
        lambda x, y: x / safe(y),
        lambda g, x, y: g / safe(y),
        lambda g, x, y: np.where(np.abs(y) >= EPS_FLOOR, -g * x / (y * y), 0.0),
    )


def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: accumulate_grad(a, -g))


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)
    return make_op(data, (a,), lambda g: accumulate_grad(a, g * (a.data > 0)))


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)
    return make_op(data, (a,), lambda g: accumulate_grad(a, g * data))


def log(a):
    """Natural log with underflow clamping; genuinely negative input raises."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("log of negative value")
    safe = np.maximum(a.data, EPS_FLOOR)
    data = np.log(safe)

    def bw(g):
        accumulate_grad(a, np.where(a.data >= EPS_FLOOR, g / safe, 0.0))

    return make_op(data, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        accumulate_grad(a, g * data * (1.0 - data))

    return make_op(data, (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    safe = np.maximum(a.data, EPS_FLOOR)
    data = np.sqrt(safe)

    def bw(g):
        accumulate_grad(a, np.where(a.data >= EPS_FLOOR, 0.5 * g / data, 0.0))

    return make_op(data, (a,), bw)


def clamp(a, lo, hi):
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return make_op(data, (a,), lambda g: accumulate_grad(a, g * mask))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes do not agree: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    return make_op(data, (a, b), bw)


def softmax(a):
    """Row softmax over the last axis, computed with max subtraction."""
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g):
        accumulate_grad(a, (g - np.sum(g * y, axis=-1, keepdims=True)) * y)

    return make_op(y, (a,), bw)


def _check_axis(a, axis):
    if a.data.size == 0:
        raise DimensionError("reduction over an empty tensor")
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if a.data.shape[ax] == 0:
            raise DimensionError(f"reduction over empty axis {ax}")
    return axes


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    data = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        accumulate_grad(a, np.broadcast_to(g, a.data.shape).copy())

    return make_op(data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    data = np.mean(a.data, axis=axes, keepdims=keepdims)
    n = a.data.size if axes is None else int(np.prod([a.data.shape[ax] for ax in axes]))

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        accumulate_grad(a, np.broadcast_to(g, a.data.shape) / n)

    return make_op(data, (a,), bw)


def tmax(a, axis=None, keepdims=False):
    """Max reduction; gradient routes to the first (lowest-index) maximum."""
    a = as_tensor(a)
    _check_axis(a, axis)
    if axis is None:
        data = np.max(a.data)
        idx = np.argmax(a.data)

        def bw(g):
            full = np.zeros_like(a.data)
            full.flat[idx] = np.sum(g)
            accumulate_grad(a, full)

        return make_op(data, (a,), bw)
    if not isinstance(axis, int):
        raise DimensionError("max reduction supports a single axis")
    data = np.max(a.data, axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
        accumulate_grad(a, full)

    return make_op(data, (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)
    return make_op(data, (a,), lambda g: accumulate_grad(a, g.reshape(a.data.shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        accumulate_grad(a, np.transpose(g, inv))

    return make_op(data, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate_grad(t, g[tuple(sl)])

    return make_op(data, tuple(tensors), bw)


def gather_rows(a, idx):
    """Select rows by integer index; duplicate indices accumulate gradients."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        accumulate_grad(a, full)

    return make_op(data, (a,), bw)
