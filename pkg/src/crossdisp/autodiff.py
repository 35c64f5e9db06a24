"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable operation appends a record ``(output, inputs, backward)``
to the current :class:`Tape`. :func:`backward` walks the tape once in reverse
recording order, which is a valid reverse topological order because a
record's inputs always exist before it is created. Tapes are single use:
``backward`` consumes the tape it runs on.

The current tape and the grad-enabled flag are thread local, so independent
threads can build and differentiate graphs on disjoint data.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


class ShapeError(ValueError):
    pass


@dataclass
class Record:
    output: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    _ids = itertools.count(1)

    def __init__(self):
        self.records: list[Record] = []

    def __len__(self):
        return len(self.records)

    def record(self, output, inputs, backward) -> None:
        output.node_id = next(Tape._ids)
        self.records.append(Record(output, inputs, backward))

    def clear(self) -> None:
        self.records = []

    def __enter__(self):
        self._prev = _local.__dict__.get("tape")
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node_id is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        current_tape().record(out, inputs, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    th = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    out = 0.5 * x * (1.0 + th)

    def back(g):
        dth = (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * dth),)

    return _make(out, (a,), back)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, ts, back)


def gather(a, index, axis: int = -2) -> Tensor:
    """Select slices of ``a`` along ``axis`` (rows by default) by integer index."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    ax = axis % a.ndim
    if index.size and (index.min() < -a.shape[ax] or index.max() >= a.shape[ax]):
        raise ShapeError(f"gather: index out of range for shape {a.shape} along axis {axis}")

    def back(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, ax, 0)
        np.add.at(moved, index, np.moveaxis(g, ax, 0))
        return (out,)

    return _make(np.take(a.data, index, axis=ax), (a,), back)


# ---------------------------------------------------------------- reductions


def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)) if not keepdims else g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(sorted(x % len(shape) for x in axes))
        for x in axes:
            g = np.expand_dims(g, x)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(out.size, 1)
    return _make(out, (a,), lambda g: (_expand(g / n, a.shape, axis, keepdims).copy(),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a, weight=None, bias=None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis; optional learned affine."""
    a = as_tensor(a)
    weight = None if weight is None else as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    for name, t in (("weight", weight), ("bias", bias)):
        if t is not None and t.shape != a.shape[-1:]:
            raise ShapeError(f"layer_norm: {name} shape {t.shape} vs input {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data

    def back(g):
        dxhat = g * weight.data if weight is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if weight is not None:
            grads.append(unbroadcast(g * xhat, weight.shape))
        if bias is not None:
            grads.append(unbroadcast(g, bias.shape))
        return grads

    inputs = (a,) + tuple(t for t in (weight, bias) if t is not None)
    return _make(out, inputs, back)


# ---------------------------------------------------------------- differentiation


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = current_tape()
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.node_id, None)
        if g is None:
            continue
        for t, gt in zip(rec.inputs, rec.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = np.array(gt, dtype=np.float64) if t.grad is None else t.grad + gt
            elif t.node_id in grads:
                grads[t.node_id] = grads[t.node_id] + gt
            else:
                grads[t.node_id] = gt
    tape.clear()


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-6, indices=None) -> float:
    """Max over components of ``|analytic - central difference| / max(1, |analytic|)``.

    ``indices`` optionally restricts the finite-difference comparison to a
    subset of flat component indices.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with Tape():
        out = f(leaf)
        backward(out)
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad
    flat = range(base.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for k in flat:
            xp = base.copy().reshape(-1)
            xm = xp.copy()
            xp[k] += step
            xm[k] -= step
            num = (f(Tensor(xp.reshape(base.shape))).item() - f(Tensor(xm.reshape(base.shape))).item()) / (2 * step)
            a = analytic.reshape(-1)[k]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
