"""Binary checkpoint files: versioned header, name table, shapes, little-endian f64 payload.

Layout::

    magic   b"GDCKPT\\0\\0"          8 bytes
    version u32
    count   u32
    per entry:
        name_len u32, name utf-8 bytes
        ndim u32, dims u64 * ndim
    per entry (same order): prod(dims) little-endian f64 values
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GDCKPT\x00\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    items = [(name, np.asarray(a, dtype=np.float64)) for name, a in arrays.items()]
    for name, arr in items:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for _, arr in items:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        table.append((name, tuple(int(d) for d in dims)))
    out = {}
    for name, dims in table:
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        out[name] = arr.reshape(dims)
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(blob) - off})")
    return out


def save_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(arrays))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
