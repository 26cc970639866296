"""Training configuration, named presets and the ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..backbone import BackboneConfig
from ..texture import TextureConfig
from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    """Epochs are 1-indexed.  Epochs <= warmup use the reconstruction term only;
    the learning rate is halved for epochs > halve_at."""

    epochs: int = 30
    lr0: float = 1e-3
    halve_at: int = 20
    warmup: int = 3

    def __post_init__(self):
        if not (0 <= self.warmup < self.halve_at <= self.epochs):
            raise ConfigError(f"schedule needs warmup < halve_at <= epochs, got "
                              f"{self.warmup}, {self.halve_at}, {self.epochs}")

    def lr(self, epoch: int) -> float:
        return self.lr0 if epoch <= self.halve_at else self.lr0 * 0.5

    def adversarial(self, epoch: int) -> bool:
        return epoch > self.warmup

    def unfold(self) -> list[float]:
        return [self.lr(e) for e in range(1, self.epochs + 1)]


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "desk"
    epochs: int = 30
    lr0: float = 1e-3
    halve_at: int = 20
    warmup: int = 3
    batch_size: int = 4
    lr_patch: int = 24
    w_rec: float = 1.0
    w_adv: float = 5e-4
    w_per: float = 1e-2
    w_tex: float = 1e-2
    gp_lambda: float = 10.0
    seed: int = 0
    ckpt_every: int = 5
    temporal_radius: int = 2
    base_channels: int = 32
    num_blocks: int = 8
    injection: tuple = (2, 4, 6)
    taps: tuple = (3, 5, 7)
    lte_widths: tuple = (16, 32, 64)
    match_patch: int = 3
    disc_widths: tuple = (16, 32, 64)

    def __post_init__(self):
        self.schedule  # validates
        if self.batch_size < 1 or self.ckpt_every < 1:
            raise ConfigError("batch_size and ckpt_every must be >= 1")
        if self.lr_patch < 16 or self.lr_patch % 4:
            raise ConfigError("lr_patch must be >= 16 and divisible by 4")

    @property
    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self.epochs, self.lr0, self.halve_at, self.warmup)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_rec, self.w_adv, self.w_per, self.w_tex, self.gp_lambda)

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            temporal_radius=self.temporal_radius,
            base_channels=self.base_channels,
            num_blocks=self.num_blocks,
            injection=tuple(self.injection),
            taps=tuple(self.taps),
            texture=TextureConfig(widths=tuple(self.lte_widths), patch=self.match_patch),
        )

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


PRESETS = {
    "desk": TrainConfig(),
    "paper": TrainConfig(preset="paper", epochs=500, lr0=1e-3, halve_at=300, warmup=20, lr_patch=96,
                         w_rec=1.0, w_adv=5e-4, w_per=1e-2, w_tex=1e-2),
}


def _coerce(field_type, raw: str, key: str):
    raw = raw.strip()
    try:
        if field_type in (int, "int"):
            return int(raw)
        if field_type in (float, "float"):
            return float(raw)
        if field_type in (tuple, "tuple"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; a ``preset`` line picks the base values."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((key, value))
    preset = next((v for k, v in pairs if k == "preset"), "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    types = {f.name: f.type for f in fields(TrainConfig)}
    unknown = [k for k, _ in pairs if k not in types]
    if unknown:
        raise ConfigError(f"invalid config key(s): {', '.join(unknown)}")
    overrides = {k: _coerce(types[k], v, k) for k, v in pairs if k != "preset"}
    try:
        return PRESETS[preset].replace(**overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
