"""Adam with bias correction."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..autodiff import Parameter


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state(self, prefix: str) -> dict:
        out = {}
        for name in self.m:
            out[f"{prefix}.m/{name}"] = self.m[name]
            out[f"{prefix}.v/{name}"] = self.v[name]
        return out

    def load_state(self, entries: dict, prefix: str, t: int) -> None:
        for name in self.m:
            self.m[name] = entries[f"{prefix}.m/{name}"].astype(self.m[name].dtype)
            self.v[name] = entries[f"{prefix}.v/{name}"].astype(self.v[name].dtype)
        self.t = int(t)
