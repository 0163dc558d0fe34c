"""Central finite-difference oracles (test-only evaluators)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterSet


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    jac = np.zeros(f0.shape + (x.size,))
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        jac[..., j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return jac.reshape(f0.shape + x.shape)


def fd_gradient(loss_value: Callable[[], float], params: ParameterSet, h: float = 1e-5,
                indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of a scalar loss over the flattened parameter vector.

    ``indices`` restricts the perturbed coordinates; others are returned as NaN.
    """
    base = params.flat().copy()
    out = np.full(base.size, np.nan)
    idx = np.arange(base.size) if indices is None else np.asarray(indices)
    try:
        for i in idx:
            v = base.copy()
            v[i] += h
            params.set_flat(v)
            fp = loss_value()
            v[i] -= 2 * h
            params.set_flat(v)
            fm = loss_value()
            out[i] = (fp - fm) / (2 * h)
    finally:
        params.set_flat(base)
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor * max(|a|_inf, |b|_inf)).

    The floor keeps entries that are tiny relative to the largest one from
    dominating through rounding noise.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max())
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor * scale)
    return float(np.max(np.abs(a - b) / denom))
