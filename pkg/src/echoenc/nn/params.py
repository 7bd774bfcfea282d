"""Named parameter storage and ViT-style initialization."""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


class ParamStore:
    """Mapping of parameter path -> Tensor, iterated in sorted name order."""

    def __init__(self, arrays=None, requires_grad=True):
        self._t = {}
        for name, arr in (arrays or {}).items():
            self._t[name] = Tensor(np.array(arr, dtype=np.float64), requires_grad=requires_grad, name=name)

    def __getitem__(self, name) -> Tensor:
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __len__(self):
        return len(self._t)

    def __setitem__(self, name, value):
        self._t[name] = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True, name=name)

    def names(self):
        return sorted(self._t)

    def items(self):
        for n in self.names():
            yield n, self._t[n]

    def arrays(self) -> dict:
        return {n: t.data for n, t in self.items()}

    def schema(self) -> dict:
        return {n: t.shape for n, t in self.items()}

    def zero_grad(self):
        for t in self._t.values():
            t.grad = None

    def copy(self, requires_grad=None) -> "ParamStore":
        out = ParamStore()
        for n, t in self.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out._t[n] = Tensor(t.data.copy(), requires_grad=rg, name=n)
        return out

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._t.values()))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n, t in self.items():
            h.update(n.encode())
            h.update(str(t.shape).encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def check_same_schema(self, other: "ParamStore"):
        if self.schema() != other.schema():
            a, b = set(self.schema().items()), set(other.schema().items())
            raise UsageError(f"parameter schemas differ: {sorted(a ^ b)[:4]}")


def trunc_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within +-bound*std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std
