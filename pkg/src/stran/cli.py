"""Command line: ``stran prepare | train | enhance | eval``.

Exit codes: 0 success, 1 runtime error, 2 usage error.  ``STRAN_THREADS``
caps both the BLAS pool and the per-frame worker pool.
"""
from __future__ import annotations

import argparse
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Tensor
from .backbone import enhance_frame, precompute_reference, stack_window
from .image_ops import DegradeConfig, degrade, resize
from .io import manifest as mf
from .io.checkpoint import CheckpointError
from .io.images import FormatError, list_frames, read_frame, write_frame
from .metrics import MetricReport
from .training import PRESETS, ConfigError, DatasetError, TrainingError, format_config, load_config, load_triples
from .training.loop import load_generator, train_loop


class CliError(RuntimeError):
    pass


RUNTIME_ERRORS = (CliError, ConfigError, DatasetError, TrainingError, CheckpointError,
                  FormatError, mf.ManifestError, OSError, ValueError, KeyError)


def worker_count() -> int:
    raw = os.environ.get("STRAN_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"STRAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"STRAN_THREADS must be a positive integer, got {raw!r}")
    return n


def ordered_map(fn: Callable, items: Iterable, workers: int) -> List:
    """Map in a thread pool; results come back in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _read(path) -> np.ndarray:
    try:
        return read_frame(path)
    except (OSError, FormatError) as exc:
        raise CliError(f"cannot read frame {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------
def cmd_prepare(args, workers: int) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise CliError(f"input directory {src} does not exist")
    clips = sorted(p for p in src.iterdir() if p.is_dir())
    if not clips:
        raise CliError(f"no clip subdirectories in {src}")
    cfg = DegradeConfig(factor=args.factor, q=args.q, seed=args.seed, block=args.block)
    out = Path(args.out)
    gallery = _read(args.ref) if args.ref else None
    m = mf.Manifest(degrade=cfg, root=out)
    for clip in clips:
        paths = list_frames(clip)
        if not paths:
            raise CliError(f"clip {clip} has no frames")
        frames = ordered_map(_read, paths, workers)
        for p, f in zip(paths, frames):
            if f.shape[1] % cfg.factor or f.shape[2] % cfg.factor:
                raise CliError(f"{p}: {f.shape[2]}x{f.shape[1]} is not divisible by factor {cfg.factor}")
        lr = ordered_map(lambda f: degrade(Tensor(f[None]), cfg).data[0], frames, workers)
        hr_dir, lr_dir = out / clip.name / "hr", out / clip.name / "lr"
        hr_dir.mkdir(parents=True, exist_ok=True)
        lr_dir.mkdir(parents=True, exist_ok=True)
        hr_paths, lr_paths = [], []
        for t, (p, small) in enumerate(zip(paths, lr)):
            hp = hr_dir / f"frame_{t:04d}{p.suffix.lower()}"
            shutil.copyfile(p, hp)
            lp = lr_dir / f"frame_{t:04d}.stfr"
            write_frame(lp, small)
            hr_paths.append(hp)
            lr_paths.append(lp)
        if gallery is not None:
            ref = gallery
            if ref.shape != frames[0].shape:
                ref = resize(Tensor(ref[None]), *frames[0].shape[1:], "bicubic").data[0]
                ref = np.clip(ref, 0.0, 1.0)
            ref_path = out / clip.name / "reference.stfr"
            write_frame(ref_path, ref)
        else:
            ref_path = hr_paths[0]
        m.clips.append(mf.ClipEntry(clip.name, ref_path, hr_paths, lr_paths))
    mf.save(out / "manifest.txt", m)
    print(f"prepared {len(m.clips)} clip(s), {sum(len(c.hr) for c in m.clips)} frame(s) -> {out / 'manifest.txt'}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def cmd_train(args, workers: int) -> int:
    m = mf.load(args.manifest)
    cfg = load_config(args.config) if args.config else PRESETS["desk"]
    print(format_config(cfg), end="")
    triples = load_triples(m, cfg.temporal_radius)
    if not triples:
        raise CliError("manifest lists no frames")
    out = Path(args.out)
    train_loop(triples, cfg, out, resume=args.resume)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    print(f"trained {cfg.epochs} epoch(s) -> {out / 'final.stck'}")
    return 0


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------
def cmd_enhance(args, workers: int) -> int:
    m = mf.load(args.manifest)
    try:
        clip = m.clip(args.clip)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    lr = [_read(p)[None] for p in clip.lr]
    out = Path(args.out)
    if args.bicubic:
        def run(t: int) -> np.ndarray:
            h, w = lr[t].shape[2:]
            up = resize(Tensor(lr[t]), h * 4, w * 4, "bicubic").data[0]
            return np.clip(up, 0.0, 1.0)
    else:
        if not args.ckpt:
            raise CliError("--ckpt is required unless --bicubic is given")
        g, cfg = load_generator(args.ckpt)
        bcfg = cfg.backbone
        ref = _read(args.ref if args.ref else clip.reference)
        h, w = lr[0].shape[2:]
        if ref.shape[1:] != (h * bcfg.upscale, w * bcfg.upscale):
            ref = np.clip(resize(Tensor(ref[None]), h * bcfg.upscale, w * bcfg.upscale, "bicubic").data[0], 0, 1)
        feats = precompute_reference(ref[None], (h, w), g)

        def run(t: int) -> np.ndarray:
            return enhance_frame(stack_window(lr, t, bcfg.temporal_radius), feats, g, bcfg)[0]

    frames = ordered_map(run, range(len(lr)), workers)
    out.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        write_frame(out / f"frame_{t:04d}.ppm", f)
    print(f"enhanced {len(frames)} frame(s) of clip {clip.clip_id} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
def _video_pairs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if list_frames(pred) or not any(p.is_dir() for p in pred.iterdir()):
        return [(gt.name if gt.name != "hr" else gt.parent.name, pred, gt)]
    pairs = []
    for sub in sorted(p for p in pred.iterdir() if p.is_dir()):
        g = gt / sub.name
        if (g / "hr").is_dir():
            g = g / "hr"
        if not g.is_dir():
            raise CliError(f"no ground truth directory for video {sub.name} under {gt}")
        pairs.append((sub.name, sub, g))
    return pairs


def cmd_eval(args, workers: int) -> int:
    pred, gt = Path(args.pred), Path(args.gt)
    for d in (pred, gt):
        if not d.is_dir():
            raise CliError(f"directory {d} does not exist")
    report = MetricReport()
    for vid, pdir, gdir in _video_pairs(pred, gt):
        pf, gf = list_frames(pdir), list_frames(gdir)
        if len(pf) != len(gf):
            raise CliError(f"video {vid}: {len(pf)} predicted frame(s) but {len(gf)} ground-truth frame(s)")
        if not pf:
            raise CliError(f"video {vid}: no frames")

        def score(i: int):
            a, b = _read(pf[i]), _read(gf[i])
            if a.shape != b.shape:
                raise CliError(f"{pf[i]}: shape {a.shape} differs from ground truth {b.shape}")
            scratch = MetricReport()
            return scratch.add(vid, i, a, b)

        report.frames.extend(ordered_map(score, range(len(pf)), workers))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.save(args.out)
    agg = report.aggregate()
    print(" ".join(f"{k}={m:.4f}±{s:.4f}" for k, (m, s) in agg.items()) + " (feat_dist: LPIPS stand-in)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stran", description="Reference-based video enhancement.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare", help="degrade HR clips and write a manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--ref", help="gallery image used as every clip's reference")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a generator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance one clip")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ref", help="override the clip's reference frame")
    p.add_argument("--bicubic", action="store_true", help="bicubic upscaling baseline instead of the model")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("eval", help="score predicted frames against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        workers = worker_count()
        with threadpool_limits(limits=workers):
            return args.fn(args, workers)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
