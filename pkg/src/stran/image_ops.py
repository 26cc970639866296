"""Image-space primitives: resampling, pixel shuffle, patch grids, degradation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .autodiff import Tensor, pixel_shuffle, pixel_unshuffle, separable_map
from .autodiff.tensor import ShapeError

__all__ = [
    "resize",
    "resize_matrix",
    "pixel_shuffle",
    "pixel_unshuffle",
    "PatchGrid",
    "patch_grid",
    "extract_patches",
    "fold_patches",
    "DegradeConfig",
    "degrade",
    "block_dct_quantize",
]


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------
def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _linear(t: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(t), 0.0, None)


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int, kernel: str) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix for one axis.

    Pixel centres are aligned (src = (dst + 0.5) * n_in / n_out - 0.5), taps
    falling outside the signal are clamped to the edge sample, and the kernel
    is not widened when downscaling.
    """
    if kernel == "bicubic":
        taps, fn = 4, _cubic
    elif kernel == "bilinear":
        taps, fn = 2, _linear
    else:
        raise ValueError(f"unknown resize kernel {kernel!r}")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64) - (taps // 2 - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for k in range(taps):
        idx = base + k
        wgt = fn(src - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wgt)
    m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


def resize(img: Tensor, out_h: int, out_w: int, kernel: str = "bicubic") -> Tensor:
    """Separable resize of an NCHW tensor; differentiable as a fixed linear map."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be >= 1x1, got {out_h}x{out_w}")
    _, _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    return separable_map(img, resize_matrix(h, out_h, kernel), resize_matrix(w, out_w, kernel))


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------
def _origins(size: int, d: int, stride: int) -> np.ndarray:
    last = size - d
    o = list(range(0, last + 1, stride))
    if o[-1] != last:
        o.append(last)  # keep the trailing border covered
    return np.asarray(o, dtype=np.int64)


@dataclass(frozen=True)
class PatchGrid:
    """Row-major layout of d x d patches over an (h, w) map."""

    height: int
    width: int
    d: int
    stride: int
    rows: tuple
    cols: tuple

    @property
    def count(self) -> int:
        return len(self.rows) * len(self.cols)

    @property
    def shape(self) -> tuple:
        return len(self.rows), len(self.cols)

    def origin(self, i: int) -> tuple:
        """(row, col) of patch i."""
        r, c = divmod(i, len(self.cols))
        return self.rows[r], self.cols[c]

    def origins(self) -> np.ndarray:
        rr, cc = np.meshgrid(np.asarray(self.rows), np.asarray(self.cols), indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)

    def coverage(self) -> np.ndarray:
        cov = np.zeros((self.height, self.width), dtype=np.int64)
        for r in self.rows:
            for c in self.cols:
                cov[r : r + self.d, c : c + self.d] += 1
        return cov


def patch_grid(height: int, width: int, d: int, stride: int = 1) -> PatchGrid:
    if d < 1 or stride < 1:
        raise ValueError(f"patch size and stride must be >= 1, got d={d}, stride={stride}")
    if d > height or d > width:
        raise ShapeError("patch_grid", (height, width), (d, d), "patch larger than feature map")
    return PatchGrid(height, width, d, stride,
                     tuple(int(v) for v in _origins(height, d, stride)),
                     tuple(int(v) for v in _origins(width, d, stride)))


def extract_patches(feat, d: int, stride: int = 1):
    """Patches of a (c, h, w) or (1, c, h, w) map as rows of length c*d*d.

    Returns ``(patches, grid)`` with patches shaped (grid.count, c*d*d); each
    row is flattened channel-major (c, dy, dx).
    """
    arr = feat.data if isinstance(feat, Tensor) else np.asarray(feat)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError("extract_patches", arr.shape, (1,), "expects a single sample")
        arr = arr[0]
    c, h, w = arr.shape
    grid = patch_grid(h, w, d, stride)
    win = np.lib.stride_tricks.sliding_window_view(arr, (d, d), axis=(1, 2))  # c, h-d+1, w-d+1, d, d
    win = win[:, np.asarray(grid.rows)][:, :, np.asarray(grid.cols)]
    patches = win.transpose(1, 2, 0, 3, 4).reshape(grid.count, c * d * d)
    return patches, grid


def fold_patches(patches, grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`extract_patches`, averaging overlapping contributions."""
    p = np.asarray(patches.data if isinstance(patches, Tensor) else patches)
    d = grid.d
    c = p.shape[1] // (d * d)
    blocks = p.reshape(grid.shape[0], grid.shape[1], c, d, d)
    acc = np.zeros((c, grid.height, grid.width), dtype=np.result_type(p.dtype, np.float32))
    for i, r in enumerate(grid.rows):
        for j, col in enumerate(grid.cols):
            acc[:, r : r + d, col : col + d] += blocks[i, j]
    return acc / grid.coverage()


# ---------------------------------------------------------------------------
# degradation (codec stand-in)
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DegradeConfig:
    factor: int = 4
    kernel: str = "bilinear"
    block: int = 8
    q: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("downscale factor must be >= 1")
        if self.block < 1:
            raise ValueError("block size must be >= 1")
        if self.q < 0:
            raise ValueError("quantization step must be >= 0")
        if self.kernel != "bilinear":
            raise ValueError("degradation downscale kernel must be bilinear")

    def describe(self) -> str:
        return f"factor={self.factor} kernel={self.kernel} block={self.block} q={self.q!r} seed={self.seed}"

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode("utf-8")).hexdigest()[:16]


def block_dct_quantize(img: np.ndarray, block: int, q: float) -> np.ndarray:
    """Quantize orthonormal 2-D DCT-II coefficients of each block x block tile.

    ``img`` is (..., h, w) with h, w multiples of ``block``.
    """
    *lead, h, w = img.shape
    if h % block or w % block:
        raise ShapeError("block_dct_quantize", img.shape, (block, block), "block size must divide dims")
    tiles = img.reshape(*lead, h // block, block, w // block, block)
    axes = (len(lead) + 1, len(lead) + 3)
    coef = scipy.fft.dctn(tiles, type=2, norm="ortho", axes=axes)
    coef = np.round(coef / q) * q
    out = scipy.fft.idctn(coef, type=2, norm="ortho", axes=axes)
    return out.reshape(img.shape)


def degrade(hr_frame: Tensor, cfg: DegradeConfig = DegradeConfig()) -> Tensor:
    """Bilinear downscale followed by block-DCT quantization, clipped to [0, 1]."""
    n, c, h, w = hr_frame.shape
    f = cfg.factor
    if h % f or w % f:
        raise ShapeError("degrade", (h, w), (f, f), "frame dims must be divisible by the downscale factor")
    lr = resize(hr_frame.detach(), h // f, w // f, cfg.kernel).data
    if cfg.q == 0:
        return Tensor(lr)
    b = cfg.block
    lh, lw = lr.shape[2:]
    ph, pw = (-lh) % b, (-lw) % b
    padded = np.pad(lr.astype(np.float64), ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    out = block_dct_quantize(padded, b, cfg.q)[:, :, :lh, :lw]
    return Tensor(np.clip(out, 0.0, 1.0).astype(lr.dtype))
