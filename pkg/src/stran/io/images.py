"""Frame files: binary PPM (P6, maxval 255) and raw planar float "STFR"."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

STFR_MAGIC = b"STFR"


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, path, offset: int, msg: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: {msg} at byte offset {offset}")


def _ppm_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos : pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(path, start, "unexpected end of PPM header")
    return buf[start:pos], pos


def decode_ppm(buf: bytes, path="<bytes>") -> np.ndarray:
    """uint8 array (h, w, 3)."""
    if buf[:2] != b"P6":
        raise FormatError(path, 0, "missing P6 magic")
    pos = 2
    vals, starts = [], []
    for _ in range(3):
        tok, pos = _ppm_token(buf, pos, path)
        starts.append(pos - len(tok))
        if not tok.isdigit():
            raise FormatError(path, starts[-1], f"non-numeric header field {tok!r}")
        vals.append(int(tok))
    w, h, maxval = vals
    if w < 1 or h < 1:
        raise FormatError(path, starts[0] if w < 1 else starts[1], f"invalid dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(path, starts[2], f"unsupported maxval {maxval}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(path, pos, "expected single whitespace after maxval")
    pos += 1
    need = w * h * 3
    if len(buf) - pos < need:
        raise FormatError(path, len(buf), f"truncated pixel data ({len(buf) - pos} of {need} bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, h, w) floats in [0, 1] -> (h, w, 3) bytes via round(x * 255)."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return (pixels.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1).copy()


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, h, w) float image quantized to 8 bits."""
    Path(path).write_bytes(encode_ppm(to_uint8(img)))


def read_ppm(path) -> np.ndarray:
    """(3, h, w) float32 in [0, 1]."""
    return from_uint8(decode_ppm(Path(path).read_bytes(), path))


def encode_stfr(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype="<f4")
    c, h, w = img.shape
    return STFR_MAGIC + struct.pack("<III", w, h, c) + np.ascontiguousarray(img).tobytes()


def decode_stfr(buf: bytes, path="<bytes>") -> np.ndarray:
    if buf[:4] != STFR_MAGIC:
        raise FormatError(path, 0, "missing STFR magic")
    if len(buf) < 16:
        raise FormatError(path, len(buf), "truncated STFR header")
    w, h, c = struct.unpack_from("<III", buf, 4)
    need = w * h * c * 4
    if w < 1 or h < 1 or c < 1:
        raise FormatError(path, 4, f"invalid dimensions {w}x{h}x{c}")
    if len(buf) - 16 != need:
        raise FormatError(path, 16, f"payload is {len(buf) - 16} bytes, expected {need}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float32)


def write_stfr(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_stfr(img))


def read_stfr(path) -> np.ndarray:
    return decode_stfr(Path(path).read_bytes(), path)


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".stfr":
        return read_stfr(path)
    return read_ppm(path)


def write_frame(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".stfr":
        write_stfr(path, img)
    else:
        write_ppm(path, img)


FRAME_SUFFIXES = (".ppm", ".stfr")


def list_frames(directory) -> list[Path]:
    """Frame files of a directory in name order."""
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
