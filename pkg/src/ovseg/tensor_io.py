"""Binary tensor containers and multi-tensor archives.

Container layout (one tensor per file): magic bytes ``BLT0``, an unsigned
32-bit little-endian rank, ``rank`` unsigned 32-bit little-endian
dimensions, then ``prod(dims)`` IEEE-754 32-bit little-endian floats.
Values are widened to float64 on load; saving narrows to float32, so a
save/load round trip is exact at float32 precision.

An archive is a directory holding one container per tensor plus a plain
text ``manifest.txt`` with one ``name<TAB>filename`` line per tensor.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptTensorFile, ManifestMissing, NonFinite

MAGIC = b"BLT0"
MANIFEST_NAME = "manifest.txt"


def save_tensor(path: str | Path, data: np.ndarray) -> None:
    """Write one array as a BLT0 container (atomically: temp file + rename)."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"refusing to serialize non-finite tensor to {path}")
    path = Path(path)
    dims = arr.shape if arr.ndim > 0 else (1,)
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", len(dims))
    payload += struct.pack(f"<{len(dims)}I", *dims)
    payload += arr.astype("<f4").tobytes(order="C")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(payload))
    os.replace(tmp, path)


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a BLT0 container back as a float64 array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise CorruptTensorFile(f"tensor file missing: {path}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CorruptTensorFile(f"bad magic in {path}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    header_end = 8 + 4 * rank
    if rank > 32 or len(raw) < header_end:
        raise CorruptTensorFile(f"truncated header in {path}")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims)) if dims else 1
    expected = header_end + 4 * count
    if len(raw) != expected:
        raise CorruptTensorFile(
            f"payload size mismatch in {path}: have {len(raw)} bytes, want {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f4", offset=header_end, count=count)
    return flat.astype(np.float64).reshape(dims)


def save_archive(directory: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors as one container each plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in tensors.items():
        fname = name.replace("/", "_") + ".blt0"
        save_tensor(directory / fname, arr)
        lines.append(f"{name}\t{fname}\n")
    manifest = directory / MANIFEST_NAME
    tmp = manifest.with_name(MANIFEST_NAME + ".tmp")
    tmp.write_text("".join(lines))
    os.replace(tmp, manifest)


def load_archive(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise ManifestMissing(f"no {MANIFEST_NAME} in {directory}")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorruptTensorFile(f"{manifest}:{lineno}: expected 'name<TAB>filename'")
        name, fname = parts
        out[name] = load_tensor(directory / fname)
    return out
