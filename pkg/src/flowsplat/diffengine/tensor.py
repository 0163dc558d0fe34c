"""Reverse-mode tensor graph over numpy float64 arrays."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericFailure(FloatingPointError):
    """A non-finite value was produced; carries the name of the originating op."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by '{op}'")
        self.op = op


class StructuralError(RuntimeError):
    """Graph is malformed for differentiation (cycle or detached parameter)."""


_GRAPH_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _GRAPH_ENABLED
    prev = _GRAPH_ENABLED
    _GRAPH_ENABLED = False
    try:
        yield
    finally:
        _GRAPH_ENABLED = prev


def _check(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NumericFailure(op)
    return data


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "op", "requires_grad", "grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, op="leaf",
                 requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    # -- basics ---------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    # -- operators ------------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check(data, op)
    if not _GRAPH_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    return Tensor(data, tuple(parents), backward, op, requires_grad=True)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape),
                            unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def back(g):
        gb = g / b.data
        return unbroadcast(gb, a.shape), unbroadcast(-gb * out, b.shape)

    return _make(out, (a, b), back, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), f"pow{p}")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; ``mask`` is treated as a constant."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return _make(np.where(mask, a.data, b.data), (a, b),
                 lambda g: (unbroadcast(np.where(mask, g, 0.0), a.shape),
                            unbroadcast(np.where(mask, 0.0, g), b.shape)), "where")


# -- linear algebra / reductions ---------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def back(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), back, "matmul")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, i, j) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic(idx)

    def back(g):
        out = np.zeros(a.shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back, "getitem")


def take_rows(a, rows: np.ndarray) -> Tensor:
    """Gather along axis 0; backward via bincount-style scatter (faster than add.at)."""
    a = as_tensor(a)
    rows = np.asarray(rows)

    def back(g):
        flat = g.reshape(len(rows), -1)
        out = np.zeros((a.shape[0], flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(rows.ravel(), weights=flat[:, c], minlength=a.shape[0])
        return (out.reshape(a.shape),)

    return _make(a.data[rows], (a,), back, "take_rows")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# -- convolution -------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (c, ho, wo, k, k) -> (ho*wo, c*k*k)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k)
    return cols, ho, wo, xp.shape


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Single-image 2D convolution. x: (C,H,W), w: (O,C,k,k), b: (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    o, c, k, _ = w.shape
    if x.shape[0] != c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[0]}, weight {c}")
    cols, ho, wo, pshape = _im2col(x.data, k, stride, pad)
    w2 = w.data.reshape(o, -1)
    out = (cols @ w2.T).T.reshape(o, ho, wo)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]
        parents.append(b)

    def back(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2.T @ w2).reshape(ho, wo, c, k, k)
            gxp = np.zeros(pshape)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += \
                        gcols[:, :, :, i, j].transpose(2, 0, 1)
            h, wd = x.shape[1:]
            gx = gxp[:, pad : pad + h, pad : pad + wd]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return _make(out, parents, back, "conv2d")


# -- reverse sweep -----------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key, 0)
        if s == 2:
            continue
        if s == 1:
            raise StructuralError(f"graph cycle detected at op '{node.op}'")
        state[key] = 1
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad:
                ps = state.get(id(p), 0)
                if ps == 1:
                    raise StructuralError(f"graph cycle detected at op '{p.op}'")
                if ps == 0:
                    stack_.append((p, False))
    return order


def grad(loss: Tensor, wrt: Iterable[Tensor], allow_unused: bool = False) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``."""
    wrt = list(wrt)
    if loss.data.size != 1:
        raise ValueError("grad() requires a scalar loss")
    _check(loss.data, "loss")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
            if g is None or not node.parents:
                continue
            pgrads = node.backward_fn(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                _check(pg, f"backward of {node.op}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = []
    for t in wrt:
        g = grads.get(id(t))
        if g is None:
            if not allow_unused:
                raise StructuralError(
                    f"parameter {t.name or t.op!r} is detached from the loss graph")
            g = np.zeros_like(t.data)
        out.append(np.asarray(g, dtype=np.float64).reshape(t.shape))
    return out
