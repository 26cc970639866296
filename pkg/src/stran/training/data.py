"""Training samples built from a manifest."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..backbone import stack_window
from ..io.images import FormatError, read_frame
from ..io.manifest import Manifest


class DatasetError(ValueError):
    pass


@dataclass
class SampleTriple:
    window: np.ndarray      # (3 * (2k+1), h, w) LR frames, channel-stacked
    target: np.ndarray      # (3, s*h, s*w) ground truth for the centre frame
    reference: np.ndarray   # (3, s*h, s*w) HR reference shared by the clip

    def __post_init__(self):
        h, w = self.window.shape[1:]
        if self.window.shape[0] % 3 or (self.window.shape[0] // 3) % 2 == 0:
            raise DatasetError(f"window must hold an odd number of RGB frames, got {self.window.shape}")
        if self.target.shape[1:] != self.reference.shape[1:]:
            raise DatasetError("target and reference sizes differ")
        sh, sw = self.target.shape[1:]
        if sh % h or sw % w or sh // h != sw // w:
            raise DatasetError(f"target {self.target.shape} is not an integer multiple of window {self.window.shape}")

    @property
    def scale(self) -> int:
        return self.target.shape[1] // self.window.shape[1]

    def crop(self, y: int, x: int, size: int) -> "SampleTriple":
        """LR crop at (y, x); target and reference are cut at the aligned HR location."""
        s = self.scale
        hy, hx, hs = y * s, x * s, size * s
        return SampleTriple(self.window[:, y:y + size, x:x + size],
                            self.target[:, hy:hy + hs, hx:hx + hs],
                            self.reference[:, hy:hy + hs, hx:hx + hs])

    def random_crop(self, size: int, rng: np.random.Generator) -> "SampleTriple":
        h, w = self.window.shape[1:]
        if h < size or w < size:
            raise DatasetError(f"frame {h}x{w} is smaller than the {size}px patch")
        return self.crop(int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)), size)


def _read(path) -> np.ndarray:
    try:
        return read_frame(path)
    except (OSError, FormatError) as exc:
        raise DatasetError(f"cannot read frame {path}: {exc}") from exc


def load_triples(manifest: Manifest, radius: int) -> List[SampleTriple]:
    """One triple per frame of every clip, windows edge-replicated at clip ends."""
    triples = []
    for clip in manifest.clips:
        lr = [_read(p)[None] for p in clip.lr]
        ref = _read(clip.reference)
        for t, hr_path in enumerate(clip.hr):
            triples.append(SampleTriple(stack_window(lr, t, radius)[0], _read(hr_path), ref))
    return triples


def collate(triples: Sequence[SampleTriple]):
    return (np.stack([t.window for t in triples]),
            np.stack([t.target for t in triples]),
            np.stack([t.reference for t in triples]))
