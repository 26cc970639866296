"""Procedural toy clips: a textured canvas panned under a moving crop window.

Fine gratings on the canvas sit above the LR Nyquist limit, so they are lost by
the 4x downscale but present in the clip's first HR frame.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .io.images import write_ppm


def textured_canvas(rng: np.random.Generator, h: int, w: int, n_gratings: int = 4) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.3, 0.7, size=(3, 1, 1))
    # smooth colour field
    img = base + 0.15 * np.sin(2 * np.pi * (yy / h * rng.uniform(0.5, 1.5) + rng.uniform()))[None] \
        * rng.uniform(-1, 1, size=(3, 1, 1))
    # fine oriented gratings, each confined to a soft region
    for _ in range(n_gratings):
        period = rng.uniform(2.5, 6.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.25, 0.6) * max(h, w)
        mask = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img = img + 0.2 * (wave * mask)[None] * rng.uniform(0.5, 1.0, size=(3, 1, 1))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def toy_clip(seed: int, n_frames: int = 6, height: int = 64, width: int = 64,
             max_shift: int = 2) -> list[np.ndarray]:
    """HR frames (3, height, width) cut from a panning window over one canvas."""
    rng = np.random.default_rng(seed)
    pad = max_shift * n_frames
    canvas = textured_canvas(rng, height + 2 * pad, width + 2 * pad)
    vy, vx = rng.integers(-max_shift, max_shift + 1, size=2)
    frames = []
    for t in range(n_frames):
        y0, x0 = pad + vy * t, pad + vx * t
        frames.append(np.ascontiguousarray(canvas[:, y0:y0 + height, x0:x0 + width]))
    return frames


def write_toy_dataset(root, n_clips: int = 2, seed: int = 0, **kw) -> Path:
    """Lay out ``root/<clip>/frame_XXXX.ppm`` for the prepare command."""
    root = Path(root)
    for c in range(n_clips):
        d = root / f"clip{c:02d}"
        d.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(toy_clip(seed * 1000 + c, **kw)):
            write_ppm(d / f"frame_{t:04d}.ppm", f)
    return root
