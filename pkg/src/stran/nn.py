"""Named parameter collections and conv-layer helpers."""
from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autodiff import COMPUTE_DTYPE, Parameter, Tensor, conv2d, leaky_relu

SLOPE = 0.2


class ParamSet:
    """Ordered, uniquely-named collection of Parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray, dtype=COMPUTE_DTYPE) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(value, dtype=dtype), name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def subset(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def count(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for n, p in self._params.items():
            out.add(n, p.data.astype(dtype), dtype=dtype)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True):
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if strict and (missing or extra):
            raise KeyError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for n, p in self._params.items():
            if n in state:
                arr = np.asarray(state[n])
                if arr.shape != p.shape:
                    raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.shape}")
                p.data = np.ascontiguousarray(arr.astype(p.dtype))
                p.zero_grad()

    def digest(self) -> str:
        h = hashlib.sha256()
        for n, p in self._params.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def add_conv(ps: ParamSet, name: str, ic: int, oc: int, k: int, rng: np.random.Generator,
             gain: float = 1.0, zero: bool = False, dtype=COMPUTE_DTYPE):
    """Register ``name.weight`` (oc, ic, k, k) and ``name.bias`` (oc,).

    Weights are uniform in +-gain*sqrt(3/fan_in) (unit-variance preserving for
    unit-variance inputs); biases start at zero.
    """
    if zero:
        w = np.zeros((oc, ic, k, k))
    else:
        bound = gain * np.sqrt(3.0 / (ic * k * k))
        w = rng.uniform(-bound, bound, size=(oc, ic, k, k))
    ps.add(f"{name}.weight", w, dtype=dtype)
    ps.add(f"{name}.bias", np.zeros(oc), dtype=dtype)


def conv(ps: ParamSet, name: str, x: Tensor, stride: int = 1) -> Tensor:
    w = ps[f"{name}.weight"]
    return conv2d(x, w, ps[f"{name}.bias"], stride=stride, padding=w.shape[2] // 2)


def conv_act(ps: ParamSet, name: str, x: Tensor, stride: int = 1) -> Tensor:
    return leaky_relu(conv(ps, name, x, stride), SLOPE)
