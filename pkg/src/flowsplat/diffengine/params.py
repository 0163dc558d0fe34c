"""Named parameter collections with matching gradient buffers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, parameter


class ParameterSet:
    """Ordered mapping of name -> parameter tensor.

    Iteration follows insertion order, which is fixed by the code that builds the
    model, so flattening and checkpoint layout are deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = parameter(value, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._params.items()}

    def size(self) -> int:
        return int(sum(v.data.size for v in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def set_grads(self, grads) -> None:
        for t, g in zip(self._params.values(), grads):
            if g.shape != t.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {t.shape}")
            t.grad = g

    def grads(self) -> dict[str, np.ndarray]:
        return {k: v.grad for k, v in self._params.items()}

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def flat(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([v.data.ravel() for v in self._params.values()])

    def flat_grad(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([v.grad.ravel() for v in self._params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size():
            raise ValueError(f"flat vector has {vec.size} entries, expected {self.size()}")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data[...] = vec[i : i + n].reshape(t.shape)
            i += n

    def load(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"{name}: shape {v.shape} != {t.shape}")
            t.data[...] = v

    def subset(self, prefix: str) -> "ParameterSet":
        out = ParameterSet()
        for k, v in self._params.items():
            if k.startswith(prefix):
                out._params[k] = v
        return out
