"""Minimal binary PGM (P5) reading and writing for masks and label maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CorruptTensorFile


def write_pgm(path: str | Path, values: np.ndarray, maxval: int = 255) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2-d array, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > maxval or maxval > 255:
        raise ValueError("PGM values must lie in [0, maxval<=255]")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    Path(path).write_bytes(header + arr.astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise CorruptTensorFile(f"not a binary PGM: {path}")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval > 255:
        raise CorruptTensorFile(f"16-bit PGM not supported: {path}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=h * w)
    if data.size != h * w:
        raise CorruptTensorFile(f"truncated PGM payload: {path}")
    return data.reshape(h, w).copy()
