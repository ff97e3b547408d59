"""Flat binary parameter files (``OKWP``).

Layout, little-endian::

    "OKWP"  u16 version  u32 count
    repeated count times:
        u32 name_len  name (UTF-8)  u32 rank  u32 extents[rank]  f32 values[prod(extents)]
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"OKWP"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_U32 = struct.Struct("<I")


def dumps_params(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads_params(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < _HEADER.size:
        raise ValueError("truncated parameter file")
    magic, version, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    off = _HEADER.size
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = _U32.unpack_from(blob, off)
            off += 4
            name = blob[off : off + n].decode("utf-8")
            off += n
            (rank,) = _U32.unpack_from(blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = values.reshape(shape).astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"corrupt parameter file: {exc}") from exc
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes in parameter file")
    return out


def save_params(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    return loads_params(Path(path).read_bytes())
