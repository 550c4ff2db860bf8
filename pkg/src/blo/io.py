"""Flat binary array format used for bit-exact vector and field caching.

Layout (little-endian): magic b"BLO1", u32 ndim, ndim x u32 shape, then the
float64 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

_MAGIC = b"BLO1"


def write_blo1(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_blo1(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise InvalidArgument(f"{path}: not a BLO1 file")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    offset = 8 + 4 * ndim
    expected = int(np.prod(shape)) * 8
    payload = data[offset:]
    if len(payload) != expected:
        raise InvalidArgument(f"{path}: payload size {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
