"""Bit-exact tensor container used for datasets and checkpoints.

File layout (little-endian throughout):

    bytes 0..3   magic "UPG1"
    u32          rank
    u32 * rank   dims
    u32          dtype code (0 = 32-bit float)
    raw data     row-major (C order)

An optional JSON sidecar at ``<path>.json`` carries semantics (role,
normalization constants, provenance). The container itself stays dumb so it
can be parsed from any language in a few lines.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UPG1"
DTYPE_F32 = 0

_DTYPES = {DTYPE_F32: np.dtype("<f4")}


class TensorFormatError(ValueError):
    """Raised when a file does not conform to the container format."""


def write_tensor(path: str | Path, array: np.ndarray, sidecar: dict | None = None) -> Path:
    """Write ``array`` as float32 to ``path``; optionally write a JSON sidecar."""
    path = Path(path)
    arr = np.require(array, dtype="<f4", requirements="C")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(struct.pack("<I", DTYPE_F32))
        f.write(arr.tobytes(order="C"))
    if sidecar is not None:
        write_json(sidecar_path(path), sidecar)
    return path


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        if rank > 64:
            raise TensorFormatError(f"{path}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
        (code,) = struct.unpack("<I", f.read(4))
        if code not in _DTYPES:
            raise TensorFormatError(f"{path}: unknown dtype code {code}")
        dtype = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = f.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise TensorFormatError(f"{path}: truncated payload")
        if f.read(1):
            raise TensorFormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def read_sidecar(path: str | Path) -> dict:
    with open(sidecar_path(path)) as f:
        return json.load(f)


def write_json(path: str | Path, payload: dict) -> Path:
    """Canonical JSON writer: sorted keys, fixed separators, trailing newline.

    Byte-identical output for identical payloads, which the dataset manifests
    rely on for reproducibility checks.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2, separators=(",", ": "))
    path.write_text(text + "\n")
    return path
