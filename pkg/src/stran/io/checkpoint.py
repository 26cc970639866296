"""Binary checkpoint container.

Layout (little endian)::

    b"STCK" | version u32 | entry count u32
    per entry: name length u32 | name (utf-8) | rank u32 | dims u32 * rank | f32 payload
    8-byte BLAKE2b digest of every preceding byte
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"STCK"
VERSION = 1
DIGEST_SIZE = 8


class CheckpointError(ValueError):
    pass


def _digest(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=DIGEST_SIZE).digest()


def encode(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            converted = arr.astype(np.float32)
            if not np.array_equal(converted.astype(arr.dtype), arr, equal_nan=True):
                raise CheckpointError(f"entry {name!r} is not exactly representable as f32")
            arr = converted
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def decode(buf: bytes, path="<bytes>") -> dict[str, np.ndarray]:
    if len(buf) < 12 + DIGEST_SIZE or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or too short)")
    body, digest = buf[:-DIGEST_SIZE], buf[-DIGEST_SIZE:]
    if _digest(body) != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            if name in out:
                raise CheckpointError(f"{path}: duplicate entry {name!r}")
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated entry table at byte {pos}") from exc
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes before checksum")
    return out


def save(path, entries: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(entries))
    tmp.replace(path)


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes(), path)
