"""Forward-mode dual vectors whose primal and tangent parts are graph tensors.

A ``DualVector`` holds a batch of primal rows ``(N, k)`` and, per row, one tangent
per seeded input direction ``(N, D, k)``.  Because both parts are ``Tensor``s, any
quantity built from tangents (input Jacobians, divergence, convective terms) stays
differentiable with respect to the parameters that produced it.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor


def _lift(x):
    """Promote a constant operand to a tangent-free dual."""
    if isinstance(x, DualVector):
        return x
    return DualVector(as_tensor(x), None)


def _t_add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mask3(mask: np.ndarray) -> Tensor:
    return Tensor(mask.astype(np.float64)[..., None, :])


def _expand(p: Tensor) -> Tensor:
    """Primal (N, k) -> (N, 1, k) so it broadcasts against tangents."""
    if p.ndim >= 2:
        return T.reshape(p, p.shape[:-1] + (1, p.shape[-1]))
    return p


class DualVector:
    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent=None):
        self.primal = as_tensor(primal)
        self.tangent = None if tangent is None else as_tensor(tangent)

    @classmethod
    def seed(cls, x, directions: int | None = None) -> "DualVector":
        """Seed unit tangents on the leading ``directions`` columns of ``x`` (N, k)."""
        x = as_tensor(x)
        n, k = x.shape
        d = k if directions is None else directions
        tan = np.zeros((n, d, k))
        tan[:, np.arange(d), np.arange(d)] = 1.0
        return cls(x, Tensor(tan))

    @property
    def shape(self):
        return self.primal.shape

    @property
    def n_directions(self) -> int:
        return 0 if self.tangent is None else self.tangent.shape[-2]

    def jacobian(self) -> Tensor:
        """Jacobian rows (N, k, D): entry [n, i, j] = d out_i / d in_j."""
        if self.tangent is None:
            raise ValueError("dual vector carries no tangents")
        return T.swapaxes(self.tangent, -1, -2)

    def column(self, i) -> "DualVector":
        """Slice output columns; ``i`` is an int, slice or index array."""
        sl = i if not isinstance(i, int) else slice(i, i + 1)
        p = self.primal[:, sl]
        t = None if self.tangent is None else self.tangent[:, :, sl]
        return DualVector(p, t)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        o = _lift(other)
        return DualVector(self.primal + o.primal, _t_add(self.tangent, o.tangent))

    __radd__ = __add__

    def __neg__(self):
        return DualVector(-self.primal, None if self.tangent is None else -self.tangent)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        o = _lift(other)
        tan = None
        if self.tangent is not None:
            tan = self.tangent * _expand(o.primal)
        if o.tangent is not None:
            tan = _t_add(tan, o.tangent * _expand(self.primal))
        return DualVector(self.primal * o.primal, tan)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _lift(other)
        if o.tangent is None:
            inv = 1.0 / o.primal
            return self * inv
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return _lift(other) * self.reciprocal()

    def reciprocal(self):
        inv = 1.0 / self.primal
        tan = None if self.tangent is None else self.tangent * _expand(-(inv * inv))
        return DualVector(inv, tan)

    def __matmul__(self, w):
        w = as_tensor(w)
        tan = None if self.tangent is None else self.tangent @ w
        return DualVector(self.primal @ w, tan)

    # -- elementwise functions ----------------------------------------------
    def _chain(self, value: Tensor, deriv) -> "DualVector":
        if self.tangent is None:
            return DualVector(value, None)
        return DualVector(value, self.tangent * _expand(deriv()))

    def sin(self):
        return self._chain(T.sin(self.primal), lambda: T.cos(self.primal))

    def cos(self):
        return self._chain(T.cos(self.primal), lambda: -T.sin(self.primal))

    def tanh(self):
        out = T.tanh(self.primal)
        return self._chain(out, lambda: 1.0 - out * out)

    def relu(self):
        mask = (self.primal.data > 0).astype(np.float64)
        return self._chain(T.relu(self.primal), lambda: Tensor(mask))

    def softplus(self):
        x = self.primal
        # log(1 + e^x) = relu(x) + log(1 + e^-|x|)
        val = T.relu(x) + T.log(1.0 + T.exp(-(T.relu(x) + T.relu(-x))))
        return self._chain(val, lambda: 1.0 / (1.0 + T.exp(-x)))

    def square(self):
        return self * self

    def sqrt(self):
        out = T.sqrt(self.primal)
        return self._chain(out, lambda: 0.5 / out)

    def maximum(self, c: float):
        """max(self, c) for a constant ``c``; tangent is zero where clamped."""
        mask = self.primal.data > c
        val = T.where(mask, self.primal, c)
        if self.tangent is None:
            return DualVector(val, None)
        return DualVector(val, self.tangent * _mask3(mask))

    def clip(self, lo: float, hi: float):
        mask = (self.primal.data >= lo) & (self.primal.data <= hi)
        val = T.where(mask, self.primal, np.clip(self.primal.data, lo, hi))
        if self.tangent is None:
            return DualVector(val, None)
        return DualVector(val, self.tangent * _mask3(mask))

    def sum_columns(self) -> "DualVector":
        p = T.tsum(self.primal, axis=-1, keepdims=True)
        t = None if self.tangent is None else T.tsum(self.tangent, axis=-1, keepdims=True)
        return DualVector(p, t)


def concat(duals) -> DualVector:
    """Concatenate along the feature (last) axis; missing tangents become zeros."""
    duals = [_lift(d) for d in duals]
    p = T.concat([d.primal for d in duals], axis=-1)
    if all(d.tangent is None for d in duals):
        return DualVector(p, None)
    nd = next(d.n_directions for d in duals if d.tangent is not None)
    n = p.shape[0]
    parts = []
    for d in duals:
        if d.tangent is None:
            parts.append(Tensor(np.zeros((n, nd, d.primal.shape[-1]))))
        else:
            parts.append(d.tangent)
    return DualVector(p, T.concat(parts, axis=-1))


def constant(x) -> DualVector:
    """Wrap values with no seeded directions (primal-only evaluation)."""
    return DualVector(as_tensor(x), None)
