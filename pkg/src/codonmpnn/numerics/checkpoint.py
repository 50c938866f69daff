"""Portable binary checkpoints.

Layout, little-endian throughout::

    b"CMPN"  u16 version  u32 config_len  config JSON (utf-8)
    u32 count, then per entry:
    u32 name_len  name (utf-8)  u8 dtype  u8 ndim  u32 dims[ndim]  raw data
"""

from __future__ import annotations

import json
import os
import struct
from typing import IO, Mapping

import numpy as np

MAGIC = b"CMPN"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("int64"): 2,
    np.dtype("int32"): 3,
    np.dtype("uint8"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


def _read_exact(fh: IO[bytes], n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def write_checkpoint(out: str | os.PathLike | IO[bytes], config: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    if isinstance(out, (str, os.PathLike)):
        tmp = f"{os.fspath(out)}.tmp"
        with open(tmp, "wb") as fh:
            write_checkpoint(fh, config, arrays)
        os.replace(tmp, out)
        return
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    out.write(MAGIC)
    out.write(struct.pack("<HI", VERSION, len(blob)))
    out.write(blob)
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def read_checkpoint(src: str | os.PathLike | IO[bytes]) -> tuple[dict, dict[str, np.ndarray]]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, "rb") as fh:
            return read_checkpoint(fh)
    if src.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, config_len = struct.unpack("<HI", _read_exact(src, 6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(_read_exact(src, config_len).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(src, 4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(src, 4))
        name = _read_exact(src, name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(src, 2))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(src, 4 * ndim))
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        data = _read_exact(src, n * dtype.itemsize)
        arrays[name] = np.frombuffer(data, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
    return config, arrays
