"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SGNT"                      magic
    u32   version                (currently 1)
    u32   header length, then that many bytes of UTF-8 JSON (sorted keys)
    u32   entry count
    entry*:
        u32  name length, UTF-8 name
        u32  rank, then rank x u64 extents
        float32 little-endian payload, row-major

The JSON header carries whatever the writer needs to rebuild the model
(configs, ablation flags, fold index); tensors are stored in insertion order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .errors import DataError

MAGIC = b"SGNT"
VERSION = 1
_F32 = np.dtype("<f4")


def encode(tensors: Dict[str, np.ndarray], header: dict | None = None) -> bytes:
    meta = json.dumps(header or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.require(np.asarray(arr, dtype=_F32), requirements="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise DataError(f"not a checkpoint: magic {blob[:4]!r} != {MAGIC!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise DataError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    header = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        if pos + 4 * n > len(blob):
            raise DataError(f"truncated payload for {name!r}")
        tensors[name] = np.frombuffer(blob, dtype=_F32, count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after last checkpoint entry")
    return tensors, header


def save(path: Union[str, Path], tensors: Dict[str, np.ndarray], header: dict | None = None) -> None:
    Path(path).write_bytes(encode(tensors, header))


def load(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
