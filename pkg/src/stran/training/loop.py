"""Alternating critic/generator updates, the epoch loop, checkpoints and resume."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..autodiff import Tensor, backward
from ..backbone import init_generator, run_generator
from ..io import checkpoint
from ..nn import ParamSet
from .config import TrainConfig, format_config, parse_config
from .data import SampleTriple, collate
from .extractors import FeatureExtractor
from .losses import (
    discriminator,
    init_discriminator,
    loss_adv,
    loss_d,
    loss_per,
    loss_rec,
    loss_tex,
    total_loss,
)
from .optim import Adam

LOG_HEADER = "epoch,step,l_rec,l_adv,l_per,l_tex,lr"


class TrainingError(RuntimeError):
    pass


@dataclass
class StepReport:
    l_rec: float
    l_adv: float = math.nan
    l_per: float = math.nan
    l_tex: float = math.nan
    l_d: float = math.nan
    total: float = math.nan
    lr: float = math.nan

    def log_line(self, epoch: int, step: int) -> str:
        vals = [self.l_rec, self.l_adv, self.l_per, self.l_tex]
        return f"{epoch},{step}," + ",".join(f"{v:.9g}" for v in vals) + f",{self.lr:.9g}"


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def config_to_array(cfg: TrainConfig) -> np.ndarray:
    return np.frombuffer(format_config(cfg).encode("utf-8"), dtype=np.uint8).astype(np.float32)


def config_from_array(arr: np.ndarray) -> TrainConfig:
    return parse_config(arr.astype(np.uint8).tobytes().decode("utf-8"))


class Trainer:
    """Generator, critic, their optimizers and the frozen loss extractors."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.g = init_generator(cfg.backbone, seed=cfg.seed)
        self.d = init_discriminator(cfg.disc_widths, seed=cfg.seed + 1)
        self.critic = discriminator(self.d)
        self.opt_g = Adam(self.g, lr=cfg.lr0)
        self.opt_d = Adam(self.d, lr=cfg.lr0)
        self.per_ext = FeatureExtractor.standin("per_vgg_standin")
        self.tex_ext = FeatureExtractor.standin("tex_minc_standin")
        self.epoch = 0    # last completed epoch
        self.step_count = 0

    # -- single update -----------------------------------------------------
    def train_step(self, batch: Sequence[SampleTriple], epoch: int, rng: np.random.Generator) -> StepReport:
        cfg, sched = self.cfg, self.cfg.schedule
        lr = sched.lr(epoch)
        adversarial = sched.adversarial(epoch)
        window, target, reference = collate(batch)
        window, ref = Tensor(window), Tensor(reference)
        report = StepReport(l_rec=math.nan, lr=lr)

        if adversarial:
            out = run_generator(window, ref, self.g, cfg.backbone).image.detach()
            self.d.zero_grad()
            ld = loss_d(self.critic, target, out, cfg.gp_lambda, rng=rng)
            backward(ld)
            self.opt_d.step(lr)
            report.l_d = ld.item()

        self.g.zero_grad()
        res = run_generator(window, ref, self.g, cfg.backbone)
        out = res.image
        parts: List[Optional[Tensor]] = [loss_rec(target, out), None, None, None]
        if adversarial:
            parts[1] = loss_adv(self.critic, out)
            parts[2] = loss_per(out, target, res.transfer.native[-1], self.g, self.per_ext)
            parts[3] = loss_tex(out, target, self.tex_ext)
        total = total_loss(parts, cfg.weights, warmup=not adversarial)
        if isinstance(total, Tensor):
            backward(total)
            report.total = total.item()
        self.opt_g.step(lr)
        # the generator pass also deposits critic gradients; they are never applied
        self.d.zero_grad()

        report.l_rec = parts[0].item()
        if adversarial:
            report.l_adv, report.l_per, report.l_tex = (p.item() for p in parts[1:])
        return report

    # -- epochs --------------------------------------------------------------
    def run_epoch(self, triples: Sequence[SampleTriple], epoch: int) -> List[StepReport]:
        cfg = self.cfg
        order = _rng(cfg.seed, epoch).permutation(len(triples))
        reports = []
        for b in range(math.ceil(len(triples) / cfg.batch_size)):
            rng = _rng(cfg.seed, epoch, b)
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [triples[i].random_crop(cfg.lr_patch, rng) for i in idx]
            reports.append(self.train_step(batch, epoch, rng))
            self.step_count += 1
        return reports

    # -- persistence ---------------------------------------------------------
    def state(self) -> dict:
        entries = {}
        entries.update(self.g.state())
        entries.update(self.d.state())
        entries.update(self.opt_g.state("adam_g"))
        entries.update(self.opt_d.state("adam_d"))
        entries["meta.epoch"] = np.array([self.epoch], dtype=np.float32)
        entries["meta.step"] = np.array([self.step_count], dtype=np.float32)
        entries["meta.adam_t"] = np.array([self.opt_g.t, self.opt_d.t], dtype=np.float32)
        entries["meta.config"] = config_to_array(self.cfg)
        return entries

    def save(self, path) -> None:
        checkpoint.save(path, self.state())

    @classmethod
    def from_checkpoint(cls, path, cfg: Optional[TrainConfig] = None) -> "Trainer":
        entries = checkpoint.load(path)
        cfg = cfg or config_from_array(entries["meta.config"])
        tr = cls(cfg)
        tr.g.load_state({k: v for k, v in entries.items() if k in tr.g})
        tr.d.load_state({k: v for k, v in entries.items() if k in tr.d})
        t_g, t_d = (int(v) for v in entries["meta.adam_t"])
        tr.opt_g.load_state(entries, "adam_g", t_g)
        tr.opt_d.load_state(entries, "adam_d", t_d)
        tr.epoch = int(entries["meta.epoch"][0])
        tr.step_count = int(entries["meta.step"][0])
        return tr


def load_generator(path) -> tuple[ParamSet, TrainConfig]:
    """Generator weights and training config from a checkpoint."""
    entries = checkpoint.load(path)
    if "meta.config" not in entries:
        raise checkpoint.CheckpointError(f"{path}: no config entry")
    cfg = config_from_array(entries["meta.config"])
    g = init_generator(cfg.backbone, seed=cfg.seed)
    missing = [n for n in g.names() if n not in entries]
    if missing:
        raise checkpoint.CheckpointError(f"{path}: missing generator entries {missing[:3]}")
    bad = [n for n in g.names() if entries[n].shape != g[n].shape]
    if bad:
        raise checkpoint.CheckpointError(f"{path}: shape mismatch for {bad[:3]}")
    g.load_state({n: entries[n] for n in g.names()})
    return g, cfg


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_epoch{epoch:04d}.stck"


def train_loop(triples: Sequence[SampleTriple], cfg: TrainConfig, out_dir,
               resume=None, until: Optional[int] = None) -> Trainer:
    """Train for epochs ``trainer.epoch + 1 .. until`` (default: the full schedule).

    Loss lines are appended to ``out_dir/metrics.log``; checkpoints are written
    every ``cfg.ckpt_every`` epochs, at the last epoch run, and as ``final.stck``.
    """
    if not triples:
        raise TrainingError("dataset is empty")
    out_dir = Path(out_dir)
    trainer = Trainer.from_checkpoint(resume, cfg) if resume else Trainer(cfg)
    last = cfg.epochs if until is None else min(until, cfg.epochs)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.log"
    if not log_path.exists():
        log_path.write_text(LOG_HEADER + "\n", encoding="utf-8")
    for epoch in range(trainer.epoch + 1, last + 1):
        step0 = trainer.step_count
        reports = trainer.run_epoch(triples, epoch)
        with log_path.open("a", encoding="utf-8") as fh:
            for i, r in enumerate(reports):
                fh.write(r.log_line(epoch, step0 + i) + "\n")
        trainer.epoch = epoch
        if epoch % cfg.ckpt_every == 0 or epoch == last:
            trainer.save(out_dir / checkpoint_name(epoch))
    trainer.save(out_dir / "final.stck")
    return trainer
