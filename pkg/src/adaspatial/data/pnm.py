"""Binary Netpbm (P5 grayscale / P6 colour) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    pass


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    out: list[bytes] = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmError("truncated header")
        out.append(buf[start:pos])
    return out, pos


def read_pnm(path) -> np.ndarray:
    """Return a float array in [0, 1]: ``[H, W]`` for P5, ``[H, W, 3]`` for P6."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4, 0)
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"{path}: unsupported magic {magic!r} (need P5 or P6)")
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PnmError(f"{path}: malformed header") from exc
    if not (0 < maxv < 65536) or width <= 0 or height <= 0:
        raise PnmError(f"{path}: invalid header values")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxv > 255 else np.dtype("u1")
    count = width * height * channels
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos) if len(buf) - pos >= count * dtype.itemsize else None
    if raw is None:
        raise PnmError(f"{path}: pixel data truncated")
    img = raw.astype(np.float64) / maxv
    return img.reshape(height, width, 3) if channels == 3 else img.reshape(height, width)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, image: np.ndarray) -> None:
    """Write values in [0, 1] as 8-bit P5 (``[H, W]``) or P6 (``[H, W, 3]``)."""
    img = np.asarray(image)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise PnmError(f"cannot write array of shape {img.shape} as PGM/PPM")
    h, w = img.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + to_uint8(img).tobytes())
