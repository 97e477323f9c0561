"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GZSSLCKP"                      magic, 8 bytes
    uint32 version                   currently 1
    uint32 count                     number of named arrays
    per array:
        uint32 name_len, name bytes (utf-8)
        uint8  dtype tag            0 = float32, 1 = float64
        uint32 rank, rank x uint32 dims
        payload                     little-endian, row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GZSSLCKP"
VERSION = 1
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        tag = _TAGS[arr.dtype]
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", tag, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BI", blob, pos)
        pos += 5
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(blob[pos:pos + nbytes], dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(blob):
        raise ValueError("trailing bytes after last array")
    return out


def save_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(arrays))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
