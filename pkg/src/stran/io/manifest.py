"""Dataset manifest: one tab-separated line per clip.

::

    #stran-manifest 1
    #degrade factor=4 kernel=bilinear block=8 q=0.05 seed=0
    clip_id <TAB> degrade hash <TAB> reference <TAB> n <TAB> hr_0 .. hr_n-1 <TAB> lr_0 .. lr_n-1

Relative paths are resolved against the manifest's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from ..image_ops import DegradeConfig

HEADER = "#stran-manifest 1"


class ManifestError(ValueError):
    pass


@dataclass
class ClipEntry:
    clip_id: str
    reference: Path
    hr: List[Path]
    lr: List[Path]
    digest: str = ""


@dataclass
class Manifest:
    degrade: DegradeConfig
    clips: List[ClipEntry] = field(default_factory=list)
    root: Path = Path(".")

    def clip(self, clip_id: str) -> ClipEntry:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(f"unknown clip id {clip_id!r}")


def _parse_degrade(line: str) -> DegradeConfig:
    kv = dict(item.split("=", 1) for item in line.split()[1:])
    return DegradeConfig(factor=int(kv["factor"]), kernel=kv["kernel"], block=int(kv["block"]),
                         q=float(kv["q"]), seed=int(kv["seed"]))


def _rel(path: Path, root: Path) -> str:
    try:
        return Path(path).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return Path(path).resolve().as_posix()


def dumps(m: Manifest) -> str:
    lines = [HEADER, "#degrade " + m.degrade.describe()]
    digest = m.degrade.digest()
    for c in m.clips:
        fields = [c.clip_id, digest, _rel(c.reference, m.root), str(len(c.hr))]
        fields += [_rel(p, m.root) for p in c.hr]
        fields += [_rel(p, m.root) for p in c.lr]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def save(path, m: Manifest) -> None:
    Path(path).write_text(dumps(m), encoding="utf-8")


def load(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ManifestError(f"{path}: missing manifest header")
    if len(lines) < 2 or not lines[1].startswith("#degrade "):
        raise ManifestError(f"{path}: missing degrade line")
    try:
        degrade = _parse_degrade(lines[1])
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: bad degrade line: {exc}") from exc
    root = path.parent
    m = Manifest(degrade=degrade, root=root)
    expected = degrade.digest()
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        try:
            n = int(fields[3])
        except (IndexError, ValueError):
            raise ManifestError(f"{path}:{lineno}: malformed clip line") from None
        if len(fields) != 4 + 2 * n or n < 1:
            raise ManifestError(f"{path}:{lineno}: expected {n} HR and {n} LR paths")
        clip_id, digest = fields[0], fields[1]
        if digest != expected:
            raise ManifestError(f"{path}:{lineno}: degrade hash {digest} does not match {expected}")
        resolve = lambda s: (root / s) if not Path(s).is_absolute() else Path(s)  # noqa: E731
        entry = ClipEntry(clip_id, resolve(fields[2]), [resolve(s) for s in fields[4 : 4 + n]],
                          [resolve(s) for s in fields[4 + n :]], digest)
        if check_files:
            for p in [entry.reference, *entry.hr, *entry.lr]:
                if not p.is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file {p}")
        m.clips.append(entry)
    return m
