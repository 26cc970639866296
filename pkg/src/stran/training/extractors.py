"""Frozen feature extractors standing in for pretrained perceptual networks.

Each role gets a fixed-seed 4-layer strided conv stack.  The weights never
change; a caller holding real weights can pass them to ``from_state``.
"""
from __future__ import annotations

from typing import List, Mapping

import numpy as np

from ..autodiff import Tensor, add_scalar, leaky_relu
from ..nn import SLOPE, ParamSet, add_conv, conv

ROLE_SEEDS = {
    "per_vgg_standin": 19019,
    "tex_minc_standin": 20170,
    "metric_standin": 30303,
}

# (in, out, stride) per layer
LAYERS = ((3, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2))
TAPS = (1, 3)


class FeatureExtractor:
    def __init__(self, role: str, params: ParamSet, taps=TAPS):
        self.role = role
        self.params = params
        self.taps = tuple(taps)
        for p in params:
            p.requires_grad = False

    @classmethod
    def standin(cls, role: str, dtype=np.float32) -> "FeatureExtractor":
        if role not in ROLE_SEEDS:
            raise ValueError(f"unknown extractor role {role!r}")
        rng = np.random.default_rng(ROLE_SEEDS[role])
        ps = ParamSet()
        for i, (ic, oc, _) in enumerate(LAYERS):
            add_conv(ps, f"{role}.layer{i}", ic, oc, 3, rng, gain=np.sqrt(2.0), dtype=dtype)
        return cls(role, ps)

    @classmethod
    def from_state(cls, role: str, state: Mapping[str, np.ndarray], dtype=np.float32) -> "FeatureExtractor":
        ext = cls.standin(role, dtype)
        ext.params.load_state(state)
        for p in ext.params:
            p.requires_grad = False
        return ext

    def features(self, img: Tensor) -> List[Tensor]:
        x = add_scalar(img, -0.5)
        out = []
        for i, (_, _, stride) in enumerate(LAYERS):
            x = leaky_relu(conv(self.params, f"{self.role}.layer{i}", x, stride), SLOPE)
            if i in self.taps:
                out.append(x)
        return out

    def astype(self, dtype) -> "FeatureExtractor":
        return FeatureExtractor(self.role, self.params.astype(dtype), self.taps)

    def digest(self) -> str:
        return self.params.digest()
