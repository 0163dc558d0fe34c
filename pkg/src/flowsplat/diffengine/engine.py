"""Public differentiation entry points."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .dual import DualVector
from .params import ParameterSet
from .tensor import NumericFailure, Tensor, grad, no_grad


def forward_jacobian(f: Callable[[DualVector], DualVector], x) -> tuple[np.ndarray, np.ndarray]:
    """Value and exact input-Jacobian of ``f`` at ``x``.

    ``x`` is a single input vector (k,) or a batch (N, k).  Returns ``(value, jac)``
    with shapes ``(m,)``/``(m, k)`` or ``(N, m)``/``(N, m, k)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    with no_grad():
        out = f(DualVector.seed(xb))
    val = out.primal.data
    jac = out.jacobian().data
    if not (np.isfinite(val).all() and np.isfinite(jac).all()):
        raise NumericFailure("forward_jacobian")
    if single:
        return val[0], jac[0]
    return val, jac


def backprop(loss: Tensor, params: ParameterSet, allow_unused: bool = False) -> ParameterSet:
    """Fill ``params`` gradient buffers with d loss / d theta (overwrites)."""
    grads = grad(loss, params.tensors(), allow_unused=allow_unused)
    params.set_grads(grads)
    return params


def nested_grad(residual: Callable[[], Tensor], params: ParameterSet,
                allow_unused: bool = False) -> float:
    """Build a scalar residual loss from input-Jacobians and backprop to ``params``.

    ``residual`` is called with graph recording on; it typically seeds a
    ``DualVector`` and reduces the resulting tangents.  Returns the loss value.
    """
    loss = residual()
    backprop(loss, params, allow_unused=allow_unused)
    return loss.item()
