"""Multi-scale texture transformer.

A weight-shared texture extractor embeds the current frame (queries), the
reference downscaled to input resolution (keys) and the full-resolution
reference (values).  Matching runs once, on the coarsest feature scale, with
cosine relevance between d x d patches.  The best-match indices then select
value patches at every scale; the best-match score gates how much of the
transferred texture is blended into the backbone features.

Relevance, indices and the soft map are computed outside the graph, so the
only gradient path into the extractor through this module is via the values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, block_map, concat_channels, mul, pixel_unshuffle
from .autodiff.tensor import ShapeError
from .image_ops import PatchGrid, extract_patches, fold_patches, patch_grid, resize
from .nn import ParamSet, add_conv, conv, conv_act

NORM_EPS = 1e-8
NUM_SCALES = 3


@dataclass(frozen=True)
class TextureConfig:
    widths: tuple = (16, 32, 64)
    patch: int = 3
    stride: int = 1
    upscale: int = 4


def init_lte(ps: ParamSet, cfg: TextureConfig, rng: np.random.Generator, dtype=np.float32):
    c1, c2, c3 = cfg.widths
    add_conv(ps, "lte.stage1.conv", 3, c1, 3, rng, dtype=dtype)
    add_conv(ps, "lte.stage2.conv", c1, c2, 3, rng, dtype=dtype)
    add_conv(ps, "lte.stage3.conv", c2, c3, 3, rng, dtype=dtype)


def lte_forward(img: Tensor, ps: ParamSet) -> List[Tensor]:
    """Features at full, 1/2 and 1/4 of the image resolution (finest first)."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError("lte_forward", img.shape, (None, 3, None, None), "expects a 3-channel NCHW image")
    if img.shape[2] < 4 or img.shape[3] < 4:
        raise ShapeError("lte_forward", img.shape, (4, 4), "input must be at least 4x4")
    f1 = conv_act(ps, "lte.stage1.conv", img)
    f2 = conv_act(ps, "lte.stage2.conv", f1, stride=2)
    f3 = conv_act(ps, "lte.stage3.conv", f2, stride=2)
    return [f1, f2, f3]


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------
@dataclass
class AttentionMaps:
    """Relevance R (n, num_q, num_k), hard indices H and soft scores S (n, num_q)."""

    R: np.ndarray
    q_grid: PatchGrid
    k_grid: PatchGrid
    H: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None


def _unit_rows(p: np.ndarray) -> np.ndarray:
    norm = np.sqrt((p * p).sum(axis=1, keepdims=True))
    return p / np.maximum(norm, NORM_EPS)


def compute_relevance(q_feat, k_feat, d: int = 3, stride: int = 1) -> AttentionMaps:
    """Cosine similarity between every query patch and every key patch."""
    q = q_feat.data if isinstance(q_feat, Tensor) else np.asarray(q_feat)
    k = k_feat.data if isinstance(k_feat, Tensor) else np.asarray(k_feat)
    if q.ndim == 3:
        q, k = q[None], k[None]
    if q.shape[1] != k.shape[1] or q.shape[0] != k.shape[0]:
        raise ShapeError("compute_relevance", q.shape, k.shape, "batch and channel counts must match")
    rel = []
    for i in range(q.shape[0]):
        qp, q_grid = extract_patches(q[i], d, stride)
        kp, k_grid = extract_patches(k[i], d, stride)
        rel.append(_unit_rows(qp) @ _unit_rows(kp).T)
    return AttentionMaps(R=np.stack(rel), q_grid=q_grid, k_grid=k_grid)


def hard_attention(maps: AttentionMaps) -> np.ndarray:
    """Index of the most relevant key patch per query; ties go to the smallest index."""
    maps.H = np.argmax(maps.R, axis=2)
    return maps.H


def soft_attention(maps: AttentionMaps, q_grid: Optional[PatchGrid] = None) -> np.ndarray:
    """Best-match score per query folded onto the query map, shape (n, 1, h, w)."""
    if maps.H is None:
        hard_attention(maps)
    grid = q_grid or maps.q_grid
    maps.S = np.take_along_axis(maps.R, maps.H[:, :, None], axis=2)[:, :, 0]
    dd = grid.d * grid.d
    out = [fold_patches(np.repeat(s[:, None], dd, axis=1), grid) for s in maps.S]
    return np.stack(out)


def transfer_matrix(h_idx: np.ndarray, q_grid: PatchGrid, k_grid: PatchGrid) -> sp.csr_matrix:
    """Sparse (q cells, k cells) map that gathers matched patches and folds them.

    Row c holds, for every query patch covering cell c, a 1/coverage weight on
    the key-map cell at the same offset inside the matched patch.
    """
    d = q_grid.d
    q_orig = q_grid.origins()
    k_orig = k_grid.origins()[h_idx]
    dy, dx = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    rows = (q_orig[:, 0:1] + dy) * q_grid.width + (q_orig[:, 1:2] + dx)
    cols = (k_orig[:, 0:1] + dy) * k_grid.width + (k_orig[:, 1:2] + dx)
    cov = q_grid.coverage().ravel().astype(np.float64)
    rows, cols = rows.ravel(), cols.ravel()
    vals = 1.0 / cov[rows]
    shape = (q_grid.height * q_grid.width, k_grid.height * k_grid.width)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def transfer_textures(v_feat: Tensor, maps: AttentionMaps, ratio: int) -> Tensor:
    """Select value patches with the hard indices and fold them.

    ``v_feat`` must be ``ratio`` times the key map in each spatial dim; patches
    become d*ratio wide with stride*ratio, and the result is ``ratio`` times
    the query map.  Gradients reach ``v_feat`` only.
    """
    if maps.H is None:
        hard_attention(maps)
    kg, qg = maps.k_grid, maps.q_grid
    if v_feat.shape[2] != kg.height * ratio or v_feat.shape[3] != kg.width * ratio:
        raise ShapeError("transfer_textures", v_feat.shape, (kg.height * ratio, kg.width * ratio),
                         "value map must be ratio x key map")
    mats = [transfer_matrix(h, qg, kg) for h in maps.H]
    return block_map(v_feat, mats, ratio, (qg.height, qg.width))


# ---------------------------------------------------------------------------
# blending and the full module
# ---------------------------------------------------------------------------
def blend(f: Tensor, t: Tensor, s_map: np.ndarray, ps: ParamSet, name: str) -> Tensor:
    """F + conv(concat(F, T)) * S, with S broadcast over channels."""
    if f.shape[0] != t.shape[0] or f.shape[2:] != t.shape[2:]:
        raise ShapeError("blend", f.shape, t.shape, "features and textures must share n, h, w")
    s_map = np.asarray(s_map)
    if s_map.shape != (f.shape[0], 1) + f.shape[2:]:
        raise ShapeError("blend", f.shape, s_map.shape, "soft map must be (n, 1, h, w)")
    residual = conv(ps, name, concat_channels([f, t]))
    gate = Tensor(np.ascontiguousarray(np.broadcast_to(s_map, residual.shape)).astype(residual.dtype))
    return f + mul(residual, gate)


@dataclass
class ReferenceFeatures:
    """Keys (from the downscaled reference) and values (from the full reference)."""

    keys: List[Tensor]
    values: List[Tensor]


@dataclass
class TransferResult:
    textures: List[Tensor]         # per scale, at query resolution (unshuffled)
    native: List[Tensor]           # per scale, at value resolution
    soft_maps: List[np.ndarray]    # per scale, (n, 1, h, w)
    maps: AttentionMaps
    queries: List[Tensor] = field(default_factory=list)


def reference_features(ref: Tensor, in_hw: Sequence[int], ps: ParamSet) -> ReferenceFeatures:
    ref_down = resize(ref, in_hw[0], in_hw[1], "bicubic")
    return ReferenceFeatures(keys=lte_forward(ref_down, ps), values=lte_forward(ref, ps))


def texture_transfer(frame: Tensor, ref: Tensor | ReferenceFeatures, ps: ParamSet,
                     cfg: TextureConfig = TextureConfig()) -> TransferResult:
    """Match the current frame against the reference and transfer textures at every scale."""
    _, _, h, w = frame.shape
    if h % 4 or w % 4:
        raise ShapeError("texture_transfer", frame.shape, (4, 4), "input dims must be multiples of 4")
    if isinstance(ref, Tensor):
        if ref.shape[2:] != (h * cfg.upscale, w * cfg.upscale) or ref.shape[0] != frame.shape[0]:
            raise ShapeError("texture_transfer", frame.shape, ref.shape,
                             f"reference must be {cfg.upscale}x the input resolution")
        ref = reference_features(ref, (h, w), ps)
    queries = lte_forward(frame, ps)
    coarse = NUM_SCALES - 1
    maps = compute_relevance(queries[coarse], ref.keys[coarse], cfg.patch, cfg.stride)
    hard_attention(maps)
    s_coarse = soft_attention(maps)
    textures, native, soft = [], [], []
    for s in range(NUM_SCALES):
        up = 2 ** (coarse - s)
        t_native = transfer_textures(ref.values[s], maps, cfg.upscale * up)
        native.append(t_native)
        textures.append(pixel_unshuffle(t_native, cfg.upscale))
        soft.append(np.repeat(np.repeat(s_coarse, up, axis=2), up, axis=3) if up > 1 else s_coarse)
    return TransferResult(textures, native, soft, maps, queries)


def init_blend(ps: ParamSet, name: str, feat_ch: int, tex_ch: int, rng, zero: bool = True, dtype=np.float32):
    add_conv(ps, name, feat_ch + tex_ch, feat_ch, 1, rng, zero=zero, dtype=dtype)


def texture_channels(cfg: TextureConfig) -> List[int]:
    return [c * cfg.upscale * cfg.upscale for c in cfg.widths]


def mstt_forward(frame: Tensor, ref: Tensor, features: Sequence[Tensor], ps: ParamSet,
                 cfg: TextureConfig = TextureConfig(), prefix: str = "mstt.blend") -> List[Tensor]:
    """Blend transferred textures into backbone features given at every scale.

    Blend convolutions are looked up as ``{prefix}{s}`` for s = 1..3.
    """
    res = texture_transfer(frame, ref, ps, cfg)
    return [blend(f, t, s, ps, f"{prefix}{i + 1}")
            for i, (f, t, s) in enumerate(zip(features, res.textures, res.soft_maps))]
