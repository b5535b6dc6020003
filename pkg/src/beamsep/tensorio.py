"""Minimal binary tensor container used for masks, PSD matrices and filters.

Layout (all little-endian)::

    bytes 0-3   magic b"BSTN"
    byte  4     format version (1)
    byte  5     dtype code: 0 = float32, 1 = complex64
    byte  6     ndim
    byte  7     reserved (0)
    ndim x u64  dimensions
    payload     row-major (C order) elements
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"BSTN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<c8")}


def save_tensor(path, array) -> None:
    array = np.asarray(array)
    code = 1 if np.iscomplexobj(array) else 0
    array = np.ascontiguousarray(array, dtype=_DTYPES[code])
    header = MAGIC + struct.pack("<BBBB", VERSION, code, array.ndim, 0)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    version, code, ndim, _ = struct.unpack_from("<BBBB", raw, 4)
    if version != VERSION or code not in _DTYPES:
        raise ValueError(f"{path}: unsupported version {version} or dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 8)
    offset = 8 + 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - offset != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match header dims {shape}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
