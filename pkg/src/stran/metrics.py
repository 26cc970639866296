"""PSNR, SSIM and a random-feature distance used in place of LPIPS."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff import Tensor, no_grad
from .training.extractors import FeatureExtractor

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
LUMA = np.array([0.299, 0.587, 0.114])
FEAT_EPS = 1e-10
FEAT_LABEL = "feat_dist is an LPIPS stand-in (fixed random features), not comparable to LPIPS"


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _check(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _arr(a), _arr(b)
    _check(a, b, "psnr")
    err = np.mean((a - b) ** 2)
    if err == 0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / err))


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of a (3, h, w) image; single-channel input passes through."""
    img = _arr(img)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=1)
    raise ValueError(f"expected (3, h, w), (1, h, w) or (h, w) image, got {img.shape}")


@lru_cache(maxsize=None)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view
    rows = win(img, g.size, axis=0) @ g
    return win(rows, g.size, axis=1) @ g


def ssim_map(a, b, peak: float = 1.0) -> np.ndarray:
    x, y = luma(a), luma(b)
    _check(x, y, "ssim")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(a, b, peak: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, peak)))


_METRIC_EXTRACTOR: Optional[FeatureExtractor] = None


def metric_extractor() -> FeatureExtractor:
    global _METRIC_EXTRACTOR
    if _METRIC_EXTRACTOR is None:
        _METRIC_EXTRACTOR = FeatureExtractor.standin("metric_standin")
    return _METRIC_EXTRACTOR


def _unit_channels(f: np.ndarray) -> np.ndarray:
    return f / (np.sqrt(np.sum(f * f, axis=1, keepdims=True)) + FEAT_EPS)


def feature_distance(a, b, extractor: Optional[FeatureExtractor] = None) -> float:
    """Mean over taps of the spatially averaged squared distance between unit-normalized features."""
    a, b = _arr(a), _arr(b)
    _check(a, b, "feature_distance")
    ext = extractor or metric_extractor()
    if a.ndim == 3:
        a, b = a[None], b[None]
    with no_grad():
        fa = ext.features(Tensor(a.astype(np.float32)))
        fb = ext.features(Tensor(b.astype(np.float32)))
    total = 0.0
    for ta, tb in zip(fa, fb):
        d = _unit_channels(ta.data.astype(np.float64)) - _unit_channels(tb.data.astype(np.float64))
        total += float(np.mean(np.sum(d * d, axis=1)))
    return total / len(fa)


@dataclass
class FrameMetrics:
    video_id: str
    frame_idx: int
    psnr: float
    ssim: float
    feat_dist: float


@dataclass
class MetricReport:
    frames: List[FrameMetrics] = field(default_factory=list)

    def add(self, video_id: str, frame_idx: int, pred, gt, extractor=None) -> FrameMetrics:
        fm = FrameMetrics(video_id, frame_idx, psnr(pred, gt), ssim(pred, gt),
                          feature_distance(pred, gt, extractor))
        self.frames.append(fm)
        return fm

    def aggregate(self) -> dict[str, tuple[float, float]]:
        out = {}
        for key in ("psnr", "ssim", "feat_dist"):
            vals = np.array([getattr(f, key) for f in self.frames], dtype=np.float64)
            out[key] = (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"),) * 2
        return out

    def dumps(self) -> str:
        lines = [f"# {FEAT_LABEL}", "video_id,frame_idx,psnr,ssim,feat_dist"]
        for f in self.frames:
            lines.append(f"{f.video_id},{f.frame_idx},{f.psnr:.10g},{f.ssim:.10g},{f.feat_dist:.10g}")
        agg = self.aggregate()
        cells = ",".join(f"{m:.10g}±{s:.10g}" for m, s in agg.values())
        lines.append(f"aggregate(mean±std),{len(self.frames)},{cells}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")
