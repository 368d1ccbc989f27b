"""Array type, execution tape and the elementwise / shape primitives.

Every differentiable op goes through :func:`record`: it computes the forward
result eagerly with numpy, checks it for NaN/Inf and, when a tape is active and
some input requires a gradient, appends a node holding the backward closure.
Backward visits the nodes in exact reverse execution order.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

_DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class TapeError(RuntimeError):
    """Misuse of the tape (double backward, non-scalar loss, ...)."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


class Array:
    """Dense n-d array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Array):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Array(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self) -> "Array":
        return Array(self.data.copy())

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        from .nnops import matmul

        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def as_array(x, dtype=None) -> Array:
    if isinstance(x, Array):
        return x
    if dtype is None:
        dtype = _DEFAULT_DTYPE
    return Array(np.asarray(x, dtype=dtype))


# ----------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------

class _Node:
    __slots__ = ("name", "out", "inputs", "backward")

    def __init__(self, name, out, inputs, backward):
        self.name = name
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed differentiable ops.

    Use as a context manager; ops run inside the block are recorded when any
    input requires a gradient. Outside any tape, ops run in inference mode and
    their outputs never require gradients.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()
        self._spent = False

    def backward(self, loss: Array) -> None:
        if self._spent:
            raise TapeError("backward already ran on this tape; call reset() first (double backward is unsupported)")
        if loss.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if not self.nodes:
            raise TapeError("tape is empty")
        self._spent = True

        grads: dict[int, np.ndarray] = {}
        produced = set()
        leaves: dict[int, Array] = {}
        for node in self.nodes:
            produced.add(id(node.out))
            for x in node.inputs:
                if x.requires_grad and id(x) not in produced:
                    leaves.setdefault(id(x), x)
        if id(loss) in produced:
            grads[id(loss)] = np.ones(loss.shape, dtype=loss.dtype)

        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for x, gx in zip(node.inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        for key, leaf in leaves.items():
            g = grads.get(key)
            leaf.grad = np.zeros(leaf.shape, dtype=leaf.dtype) if g is None else np.array(g, dtype=leaf.dtype).reshape(leaf.shape)


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


class no_grad:
    """Suspend recording (e.g. for evaluation inside a training tape)."""

    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)


def backward(loss: Array, tape: Optional[Tape] = None) -> None:
    tape = tape or current_tape()
    if tape is None:
        raise TapeError("no active tape")
    tape.backward(loss)


def check_finite(name: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{name}: {bad} non-finite value(s) in output of shape {np.shape(data)}")


def record(name: str, out_data: np.ndarray, inputs: Sequence[Array], backward_fn: Callable) -> Array:
    """Wrap a forward result and, if needed, put its backward on the tape.

    ``backward_fn(g)`` returns one gradient (or None) per input.
    """
    check_finite(name, out_data)
    out = Array(out_data, dtype=out_data.dtype)
    tape = current_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(name, out, tuple(inputs), backward_fn))
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    a = as_array(a, getattr(b, "dtype", None) if isinstance(b, Array) else None)
    b = as_array(b, a.dtype)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from exc
    return a, b


# ----------------------------------------------------------------------
# Binary elementwise
# ----------------------------------------------------------------------

def add(a, b) -> Array:
    a, b = _pair(a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Array:
    a, b = _pair(a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Array:
    a, b = _pair(a, b)
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                             unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Array:
    a, b = _pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), bw)


def maximum(a, b) -> Array:
    a, b = _pair(a, b)
    mask = a.data >= b.data
    return record("maximum", np.where(mask, a.data, b.data), (a, b),
                  lambda g: (unbroadcast(g * mask, a.shape), unbroadcast(g * ~mask, b.shape)))


# ----------------------------------------------------------------------
# Unary elementwise
# ----------------------------------------------------------------------

def neg(a) -> Array:
    a = as_array(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Array:
    a = as_array(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Array:
    a = as_array(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return record("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Array:
    a = as_array(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def power(a, p: float) -> Array:
    a = as_array(a)
    if isinstance(p, Array):
        raise TypeError("only scalar exponents are supported")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** p
    return record("power", out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sigmoid(a) -> Array:
    a = as_array(a)
    out = expit(a.data)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Array:
    a = as_array(a)
    out = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)
    return record("softplus", out, (a,), lambda g: (g * expit(a.data),))


def tanh(a) -> Array:
    a = as_array(a)
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Array:
    a = as_array(a)
    mask = a.data > 0
    return record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a) -> Array:
    # tanh approximation
    a = as_array(a)
    x = a.data
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = c * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return record("gelu", out, (a,), bw)


def clamp_min(a, lo: float) -> Array:
    a = as_array(a)
    mask = a.data >= lo
    return record("clamp_min", np.where(mask, a.data, lo).astype(a.dtype), (a,), lambda g: (g * mask,))


def clamp_max(a, hi: float) -> Array:
    a = as_array(a)
    mask = a.data <= hi
    return record("clamp_max", np.where(mask, a.data, hi).astype(a.dtype), (a,), lambda g: (g * mask,))


def clamp(a, lo: float, hi: float) -> Array:
    a = as_array(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return record("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# ----------------------------------------------------------------------
# Reductions
# ----------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Array:
    a = as_array(a)
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return record("sum", np.asarray(out, dtype=a.dtype), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Array:
    a = as_array(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum_(a, axis, keepdims) * (1.0 / count)


def cumsum(a, axis: int) -> Array:
    a = as_array(a)
    out = np.cumsum(a.data, axis=axis)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return record("cumsum", out, (a,), bw)


# ----------------------------------------------------------------------
# Shape ops
# ----------------------------------------------------------------------

def reshape(a, shape) -> Array:
    a = as_array(a)
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Array:
    a = as_array(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return record("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def _has_array_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in idx)


def getitem(a, idx) -> Array:
    a = as_array(a)
    if isinstance(idx, Array):
        raise TypeError("index with numpy arrays, not Array")
    out = a.data[idx]
    fancy = _has_array_index(idx)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return record("getitem", np.array(out, dtype=a.dtype, copy=True), (a,), bw)


def take(a, indices: np.ndarray, axis: int = 0) -> Array:
    """Gather along ``axis`` with integer indices (repeats allowed)."""
    a = as_array(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return record("take", out, (a,), bw)


def concat(arrays: Sequence, axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    out = np.concatenate([x.data for x in arrays], axis=axis)
    splits = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", out, arrays, bw)


def stack(arrays: Sequence, axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    out = np.stack([x.data for x in arrays], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))

    return record("stack", out, arrays, bw)


def where(mask: np.ndarray, a, b) -> Array:
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    return record("where", np.where(mask, a.data, b.data), (a, b),
                  lambda g: (unbroadcast(g * mask, a.shape), unbroadcast(g * ~mask, b.shape)))
