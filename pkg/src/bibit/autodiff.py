"""Minimal reverse-mode differentiation over dense float64 arrays.

Each op that touches a tensor requiring gradients records a node holding its
parents and a closure mapping the output gradient to parent gradients. The
tape for a backward pass is the reverse topological order of the recorded
graph reachable from the loss.

Semantics worth knowing:

* leaf gradients accumulate across ``backward`` calls; callers zero them
  between optimizer steps (:func:`zero_grad`);
* gradients of intermediate tensors are reset at the start of every backward
  pass and stay readable afterwards (used by the mismatch probes);
* ``sign_ste`` / ``bool_ste`` use the clipped straight-through estimator.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import binarize as bz
from .errors import DomainError, ShapeError, StateError

# finite stand-in for -inf on masked attention logits
NEG_SENTINEL = -1e30


class _Node:
    __slots__ = ("parents", "backward", "op")

    def __init__(self, parents: tuple, backward: Callable, op: str):
        self.parents = parents
        self.backward = backward
        self.op = op


class DualTensor:
    """A float64 array with a gradient buffer and an optional tape node."""

    __slots__ = ("value", "_grad", "requires_grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: _Node | None = None
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DualTensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def grad(self) -> np.ndarray:
        """Gradient buffer, allocated as zeros on first access."""
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = None if g is None else np.asarray(g, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self):
        self._grad = None

    def detach(self) -> "DualTensor":
        return DualTensor(self.value.copy())

    def numpy(self) -> np.ndarray:
        return self.value

    def backward(self):
        backward(self)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


Tensorish = DualTensor | np.ndarray | float | int


def as_tensor(x: Tensorish) -> DualTensor:
    return x if isinstance(x, DualTensor) else DualTensor(x)


def parameter(value, name: str | None = None) -> DualTensor:
    return DualTensor(value, requires_grad=True, name=name)


def _record(value: np.ndarray, parents: Sequence[DualTensor], backward_fn: Callable, op: str) -> DualTensor:
    out = DualTensor.__new__(DualTensor)
    out.value = value
    out._grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._node = _Node(tuple(parents), backward_fn, op) if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --------------------------------------------------------------------- tape


class Tape:
    """Reverse-topological view of the graph that produced ``loss``."""

    def __init__(self, order: list[DualTensor]):
        self.order = order

    def __len__(self):
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    @classmethod
    def from_loss(cls, loss: DualTensor) -> "Tape":
        order: list[DualTensor] = []
        seen: set[int] = set()
        stack: list[tuple[DualTensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p in t._node.parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        order.reverse()
        return cls(order)


def backward(loss: DualTensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf requiring grad."""
    if loss._node is None:
        raise StateError("loss was not produced by recorded ops; run a forward pass first")
    if loss.value.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_loss(loss)
    for t in tape:
        if t._node is not None:
            t._grad = None
    loss._grad = np.ones_like(loss.value)
    for t in tape:
        node = t._node
        if node is None or t._grad is None:
            continue
        grads = node.backward(t._grad)
        for p, g in zip(node.parents, grads):
            if g is None or not p.requires_grad:
                continue
            g = _unbroadcast(np.asarray(g, dtype=np.float64), p.shape)
            p._grad = np.array(g) if p._grad is None else p._grad + g


def zero_grad(params: Iterable[DualTensor]):
    for p in params:
        p.zero_grad()


# ------------------------------------------------------------ elementwise


def add(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "add")
    return _record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "sub")
    return _record(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def div(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "div")
    av, bv = a.value, b.value
    return _record(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)), "div")


def scale(a: DualTensor, c: float) -> DualTensor:
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,), "scale")


def exp(a: DualTensor) -> DualTensor:
    y = np.exp(a.value)
    return _record(y, (a,), lambda g: (g * y,), "exp")


def log(a: DualTensor) -> DualTensor:
    av = a.value
    return _record(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a: DualTensor) -> DualTensor:
    y = np.sqrt(a.value)
    return _record(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def relu(a: DualTensor) -> DualTensor:
    m = (a.value > 0).astype(np.float64)
    return _record(a.value * m, (a,), lambda g: (g * m,), "relu")


def tanh(a: DualTensor) -> DualTensor:
    y = np.tanh(a.value)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: DualTensor) -> DualTensor:
    """Exact (erf) GELU."""
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return _record(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def sign_ste(a: DualTensor, window: bz.SteWindow = bz.DEFAULT_WINDOW) -> DualTensor:
    x = a.value
    return _record(bz.sign_fwd(x), (a,), lambda g: (bz.sign_bwd(x, g, window),), "sign_ste")


def bool_ste(a: DualTensor, window: bz.SteWindow = bz.DEFAULT_WINDOW) -> DualTensor:
    x = a.value
    return _record(bz.bool_fwd(x), (a,), lambda g: (bz.bool_bwd(x, g, window),), "bool_ste")


# -------------------------------------------------------------- structural


def matmul(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bwd(g):
        return np.matmul(g, np.swapaxes(bv, -1, -2)), np.matmul(np.swapaxes(av, -1, -2), g)

    return _record(np.matmul(av, bv), (a, b), bwd, "matmul")


def swapaxes(a: DualTensor, ax1: int = -1, ax2: int = -2) -> DualTensor:
    return _record(np.swapaxes(a.value, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def transpose(a: DualTensor, axes: Sequence[int]) -> DualTensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a: DualTensor, shape: Sequence[int]) -> DualTensor:
    src = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a: DualTensor, idx) -> DualTensor:
    src = a.shape

    def bwd(g):
        full = np.zeros(src)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.value[idx], (a,), bwd, "getitem")


def gather_rows(table: DualTensor, ids) -> DualTensor:
    """``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    src = table.shape

    def bwd(g):
        full = np.zeros(src)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, src[-1]))
        return (full,)

    return _record(table.value[ids], (table,), bwd, "gather_rows")


def concat(parts: Sequence[DualTensor], axis: int = -1) -> DualTensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bwd, "concat")


def sum(a: DualTensor, axis=None, keepdims: bool = False) -> DualTensor:  # noqa: A001
    src = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _record(np.asarray(a.value.sum(axis=axis, keepdims=keepdims)), (a,), bwd, "sum")


def mean(a: DualTensor, axis=None, keepdims: bool = False) -> DualTensor:
    if axis is None:
        n = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------- composite


def softmax(a: DualTensor, axis: int = -1) -> DualTensor:
    x = a.value
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (a,), bwd, "softmax")


def log_softmax(a: DualTensor, axis: int = -1) -> DualTensor:
    x = a.value
    z = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bwd(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(y, (a,), bwd, "log_softmax")


def masked_fill_logits(a: DualTensor, keep) -> DualTensor:
    """Replace positions where ``keep`` is False with the negative sentinel."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    km = keep.astype(np.float64)
    return _record(np.where(keep, a.value, NEG_SENTINEL), (a,), lambda g: (g * km,), "masked_fill")


def layer_norm(x: DualTensor, gamma: DualTensor, beta: DualTensor, eps: float = 1e-12) -> DualTensor:
    """Normalize over the last axis, then apply ``gamma`` and ``beta``."""
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.value

    def bwd(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, g * xhat, g

    return _record(xhat * gv + beta.value, (x, gamma, beta), bwd, "layer_norm")


def mse(a: Tensorish, b: Tensorish) -> DualTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a.value - b.value
    n = d.size
    return _record(np.asarray((d * d).mean()), (a, b), lambda g: (2.0 * g * d / n, -2.0 * g * d / n), "mse")


def sce(logits: DualTensor, target_logits: Tensorish) -> DualTensor:
    """Soft cross-entropy ``-sum softmax(target) * log_softmax(logits)``, batch-averaged."""
    target_logits = as_tensor(target_logits)
    if logits.shape != target_logits.shape:
        raise ShapeError(f"sce: shapes {logits.shape} and {target_logits.shape} differ")
    p_t = softmax(target_logits, axis=-1)
    ll = log_softmax(logits, axis=-1)
    per = scale(sum(mul(p_t, ll), axis=-1), -1.0)
    return mean(per)


def cross_entropy(logits: DualTensor, labels) -> DualTensor:
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    ll = log_softmax(logits, axis=-1)
    return scale(mean(sum(mul(ll, onehot), axis=-1)), -1.0)


def l2norm(a: DualTensor, axis=None, keepdims: bool = False) -> DualTensor:
    """Euclidean (Frobenius for matrices) norm over ``axis``.

    The gradient at a zero norm is taken as 0 (a subgradient).
    """
    av = a.value
    n = np.sqrt((av * av).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.where(n > 0, g * av / safe, 0.0),)

    out = n if keepdims else (n.reshape(()) if axis is None else np.squeeze(n, axis=axis))
    return _record(np.asarray(out), (a,), bwd, "l2norm")
