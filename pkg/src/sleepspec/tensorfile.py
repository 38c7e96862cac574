"""Binary tensor container used for all cross-backend data exchange.

Layout: 8-byte magic ``TNSR0001``, dtype code u8 (1 = float32, 2 = uint8,
3 = int64), rank u8 (max 8), rank little-endian u64 dims, then the payload
as row-major little-endian values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR0001"
MAX_RANK = 8

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.int64): 3}


class MalformedTensor(ValueError):
    pass


def write_tensor(path: Path | str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    code = _DTYPE_TO_CODE.get(array.dtype)
    if code is None:
        raise MalformedTensor(
            f"unsupported dtype {array.dtype}; use float32, uint8, or int64"
        )
    if array.ndim > MAX_RANK:
        raise MalformedTensor(f"rank {array.ndim} exceeds {MAX_RANK}")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype(_CODE_TO_DTYPE[code], copy=False).tobytes())


def read_tensor(path: Path | str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 2:
        raise MalformedTensor("file too short for a tensor header")
    if raw[: len(MAGIC)] != MAGIC:
        raise MalformedTensor(f"bad magic {raw[:8]!r}")
    code, rank = struct.unpack_from("<BB", raw, len(MAGIC))
    if code not in _CODE_TO_DTYPE:
        raise MalformedTensor(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise MalformedTensor(f"rank {rank} exceeds {MAX_RANK}")
    dims_off = len(MAGIC) + 2
    if len(raw) < dims_off + 8 * rank:
        raise MalformedTensor("file too short for the dims block")
    dims = struct.unpack_from(f"<{rank}Q", raw, dims_off)
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload_off = dims_off + 8 * rank
    expected = payload_off + count * dtype.itemsize
    if len(raw) != expected:
        raise MalformedTensor(
            f"payload length {len(raw) - payload_off} does not match dims {dims}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=payload_off)
    return data.reshape(dims).copy()
