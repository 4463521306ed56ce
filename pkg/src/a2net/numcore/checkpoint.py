"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic   8 bytes  b"A2NCKPT\\0"
    version u32
    count   u32
    count x record:
        name_len u32, name utf-8 bytes
        ndim u32, ndim x u64 dims
        prod(dims) x float64 values, row-major

The same layout (with magic ``b"A2NFEAT\\0"`` and a single record named ``features``)
stores feature matrices; see :mod:`a2net.data`.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

MAGIC = b"A2NCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(buf, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated file")
    return data


def _read_array(buf) -> np.ndarray:
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    values = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8")
    return values.astype(np.float64).reshape(shape)


def dumps(arrays: Mapping[str, np.ndarray], magic: bytes = MAGIC) -> bytes:
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        _write_array(buf, np.asarray(arr))
    return buf.getvalue()


def loads(data: bytes, magic: bytes = MAGIC) -> Dict[str, np.ndarray]:
    buf = io.BytesIO(data)
    if buf.read(len(magic)) != magic:
        raise CheckpointError("bad magic; not an a2net binary file")
    version, count = struct.unpack("<II", _read_exact(buf, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(buf, 4))
        name = _read_exact(buf, n).decode("utf-8")
        out[name] = _read_array(buf)
    if buf.read(1):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path, arrays: Mapping[str, np.ndarray], magic: bytes = MAGIC) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(arrays, magic))
    tmp.replace(path)


def load(path, magic: bytes = MAGIC) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes(), magic)
