"""Generator: temporal stem, residual trunk with texture injection, 4x head."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .autodiff import Tensor, concat_channels, leaky_relu, no_grad, pixel_shuffle, slice_channels
from .autodiff.tensor import ShapeError
from .nn import SLOPE, ParamSet, add_conv, conv, conv_act
from .texture import (
    ReferenceFeatures,
    TextureConfig,
    TransferResult,
    blend,
    init_blend,
    init_lte,
    reference_features,
    texture_channels,
    texture_transfer,
)


@dataclass(frozen=True)
class BackboneConfig:
    temporal_radius: int = 2
    base_channels: int = 32
    num_blocks: int = 8
    injection: tuple = (2, 4, 6)
    taps: tuple = (3, 5, 7)
    upscale: int = 4
    texture: TextureConfig = field(default_factory=TextureConfig)

    def __post_init__(self):
        inj = tuple(self.injection)
        if any(b >= a for a, b in zip(inj[1:], inj)) or (inj and (inj[0] < 0 or inj[-1] >= self.num_blocks)):
            raise ValueError(f"injection points must be strictly increasing and < {self.num_blocks}: {inj}")
        if len(inj) > 3:
            raise ValueError("at most three injection points (one per texture scale)")
        if not self.taps or any(not 0 <= t < self.num_blocks for t in self.taps):
            raise ValueError(f"fusion taps must be block indices < {self.num_blocks}: {self.taps}")
        if self.upscale != 4:
            raise ValueError("only 4x upscaling (two x2 pixel-shuffle stages) is supported")
        if self.texture.upscale != self.upscale:
            raise ValueError("texture upscale must equal the generator upscale")
        if self.temporal_radius < 0:
            raise ValueError("temporal radius must be >= 0")

    @property
    def window(self) -> int:
        return 2 * self.temporal_radius + 1


def init_generator(cfg: BackboneConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    c = cfg.base_channels
    add_conv(ps, "backbone.stem", 3 * cfg.window, c, 3, rng, dtype=dtype)
    for b in range(cfg.num_blocks):
        add_conv(ps, f"backbone.block{b}.conv1", c, c, 3, rng, dtype=dtype)
        add_conv(ps, f"backbone.block{b}.conv2", c, c, 3, rng, gain=0.1, dtype=dtype)
    tex_ch = texture_channels(cfg.texture)
    for m, _ in enumerate(cfg.injection):
        for j in range(m):
            add_conv(ps, f"backbone.inject{m}.down{j}", c, c, 3, rng, dtype=dtype)
        init_blend(ps, f"backbone.inject{m}.blend", c, tex_ch[m], rng, dtype=dtype)
        for j in range(m):
            add_conv(ps, f"backbone.inject{m}.up{j}", c, 4 * c, 3, rng, dtype=dtype)
    add_conv(ps, "backbone.fusion", c * len(cfg.taps), c, 3, rng, dtype=dtype)
    add_conv(ps, "backbone.head.conv1", c, 4 * c, 3, rng, dtype=dtype)
    add_conv(ps, "backbone.head.conv2", c, 3 * 4, 3, rng, dtype=dtype)
    init_lte(ps, cfg.texture, rng, dtype=dtype)
    return ps


def count_params(ps: Optional[ParamSet]) -> int:
    return 0 if ps is None else ps.count()


# ---------------------------------------------------------------------------
# temporal windows
# ---------------------------------------------------------------------------
def window_indices(t: int, length: int, radius: int) -> List[int]:
    """Frame indices t-k..t+k, replicating the nearest valid frame at the edges."""
    if length < 1 or not 0 <= t < length:
        raise IndexError(f"frame {t} outside clip of length {length}")
    return [min(max(i, 0), length - 1) for i in range(t - radius, t + radius + 1)]


def stack_window(frames: Sequence[np.ndarray], t: int, radius: int) -> np.ndarray:
    """(n, (2k+1)*3, h, w) window around frame t from a list of (n, 3, h, w) frames."""
    return np.concatenate([frames[i] for i in window_indices(t, len(frames), radius)], axis=1)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------
def stem(frames: Tensor, ps: ParamSet, cfg: BackboneConfig) -> Tensor:
    if frames.ndim != 4 or frames.shape[1] != 3 * cfg.window:
        raise ShapeError("stem", frames.shape, (None, 3 * cfg.window, None, None),
                         f"expected {cfg.window} RGB frames stacked on channels")
    return conv_act(ps, "backbone.stem", frames)


def residual_block(x: Tensor, ps: ParamSet, b: int) -> Tensor:
    h = conv_act(ps, f"backbone.block{b}.conv1", x)
    return x + conv(ps, f"backbone.block{b}.conv2", h)


def _inject(x: Tensor, m: int, res: TransferResult, ps: ParamSet) -> Tensor:
    prefix = f"backbone.inject{m}"
    if m == 0:
        return blend(x, res.textures[0], res.soft_maps[0], ps, f"{prefix}.blend")
    f = x
    for j in range(m):
        f = conv_act(ps, f"{prefix}.down{j}", f, stride=2)
    y = blend(f, res.textures[m], res.soft_maps[m], ps, f"{prefix}.blend")
    for j in range(m):
        y = pixel_shuffle(conv(ps, f"{prefix}.up{j}", y), 2)
        if j < m - 1:
            y = leaky_relu(y, SLOPE)
    return x + y


@dataclass
class GeneratorOutput:
    image: Tensor
    transfer: TransferResult


def run_generator(window: Tensor, ref, ps: ParamSet, cfg: BackboneConfig) -> GeneratorOutput:
    """Full forward pass; ``ref`` is the HR reference or precomputed ReferenceFeatures."""
    n, _, h, w = window.shape
    if h < 16 or w < 16 or h % 4 or w % 4:
        raise ShapeError("generator_forward", window.shape, (16, 16),
                         "input must be at least 16x16 with dims divisible by 4")
    if isinstance(ref, Tensor) and ref.shape[2:] != (h * cfg.upscale, w * cfg.upscale):
        raise ShapeError("generator_forward", window.shape, ref.shape,
                         f"reference must be {cfg.upscale}x the window resolution")
    k = cfg.temporal_radius
    x = stem(window, ps, cfg)
    center = slice_channels(window, 3 * k, 3 * k + 3) if cfg.window > 1 else window
    res = texture_transfer(center, ref, ps, cfg.texture)
    skip = x
    taps = []
    inject = {b: m for m, b in enumerate(cfg.injection)}
    for b in range(cfg.num_blocks):
        x = residual_block(x, ps, b)
        if b in inject:
            x = _inject(x, inject[b], res, ps)
        if b in cfg.taps:
            taps.append(x)
    fused = conv(ps, "backbone.fusion", concat_channels(taps)) + skip
    y = leaky_relu(pixel_shuffle(conv(ps, "backbone.head.conv1", fused), 2), SLOPE)
    out = pixel_shuffle(conv(ps, "backbone.head.conv2", y), 2)
    return GeneratorOutput(out, res)


def generator_forward(window: Tensor, ref, ps: ParamSet, cfg: BackboneConfig, clamp: bool = False) -> Tensor:
    out = run_generator(window, ref, ps, cfg).image
    if clamp:
        return Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def enhance_frame(window: np.ndarray, ref, ps: ParamSet, cfg: BackboneConfig) -> np.ndarray:
    """Inference helper: clamped HR frame for one stacked window."""
    with no_grad():
        return generator_forward(Tensor(window), ref, ps, cfg, clamp=True).data


def precompute_reference(ref: np.ndarray, in_hw, ps: ParamSet) -> ReferenceFeatures:
    with no_grad():
        return reference_features(Tensor(ref), in_hw, ps)
