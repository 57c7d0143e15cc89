"""Little-endian binary tensor containers.

Layout shared by all variants::

    magic (4 bytes) | u32 count | count x record

Each record is ``u32 name_len | name | 4 x u32 dims`` followed by a
variant-specific payload:

* ``SATW``: f32 values, row-major.
* ``SATQ``: f64 scale, i32 zero point, u32 wordlength, then i32 values.
* ``SATI``: i32 values (activation tensors, dims stored as ``(1, H, W, C)``).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

WEIGHT_MAGIC = b"SATW"
QUANT_MAGIC = b"SATQ"
INT_MAGIC = b"SATI"


class TensorFileError(ValueError):
    pass


def _header(magic: bytes, count: int) -> bytes:
    return magic + struct.pack("<I", count)


def _name_dims(name: str, dims: tuple[int, ...]) -> bytes:
    if len(dims) != 4:
        raise TensorFileError(f"{name}: expected 4 dims, got {dims}")
    raw = name.encode()
    return struct.pack("<I", len(raw)) + raw + struct.pack("<4I", *dims)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TensorFileError("truncated tensor file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, dims: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(dims))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()

    def record_head(self) -> tuple[str, tuple[int, ...]]:
        (nlen,) = self.unpack("<I")
        name = self.take(nlen).decode()
        dims = self.unpack("<4I")
        return name, tuple(dims)


def _open(path: str | Path, magic: bytes) -> tuple[_Reader, int]:
    data = Path(path).read_bytes()
    rd = _Reader(data)
    found = rd.take(4)
    if found != magic:
        raise TensorFileError(f"{path}: bad magic {found!r}, expected {magic!r}")
    (count,) = rd.unpack("<I")
    return rd, count


def write_weight_file(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [_header(WEIGHT_MAGIC, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        parts.append(_name_dims(name, arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_weight_file(path: str | Path) -> dict[str, np.ndarray]:
    rd, count = _open(path, WEIGHT_MAGIC)
    out = {}
    for _ in range(count):
        name, dims = rd.record_head()
        out[name] = rd.array("<f4", dims).astype(np.float64)
    return out


def write_quantized_file(path: str | Path, tensors: Mapping[str, "QuantizedTensor"]) -> None:
    parts = [_header(QUANT_MAGIC, len(tensors))]
    for name, q in tensors.items():
        parts.append(_name_dims(name, q.dims))
        p = q.params
        parts.append(struct.pack("<diI", p.scale, p.zero_point, p.wordlength))
        parts.append(np.asarray(q.values, dtype="<i4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_quantized_file(path: str | Path) -> dict[str, "QuantizedTensor"]:
    from .quantizer import QuantizedTensor, QuantParams

    rd, count = _open(path, QUANT_MAGIC)
    out = {}
    for _ in range(count):
        name, dims = rd.record_head()
        scale, zero, wl = rd.unpack("<diI")
        values = rd.array("<i4", dims).astype(np.int64)
        out[name] = QuantizedTensor(values, QuantParams(scale, zero, wl), dims)
    return out


def write_int_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [_header(INT_MAGIC, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise TensorFileError(f"{name}: activation tensors are (H, W, C)")
        parts.append(_name_dims(name, (1, *arr.shape)))
        parts.append(arr.astype("<i4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_int_tensors(path: str | Path) -> dict[str, np.ndarray]:
    rd, count = _open(path, INT_MAGIC)
    out = {}
    for _ in range(count):
        name, dims = rd.record_head()
        out[name] = rd.array("<i4", dims).astype(np.int64).reshape(dims[1:])
    return out
