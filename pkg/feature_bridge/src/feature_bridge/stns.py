"""Tensor container for handing features to downstream tooling.

Layout: magic ``STNS``, u32 version = 1, u32 dtype code (1 = f32), u32 ndim,
ndim u64 dims, then the row-major little-endian f32 payload.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STNS"
VERSION = 1
DTYPE_F32 = 1


class BridgeError(ValueError):
    """Raised on malformed inputs or export contract violations."""


def write_tensor(t: np.ndarray, path) -> None:
    arr = np.asarray(t)
    if arr.ndim < 1:
        raise BridgeError("rank must be >= 1")
    if not np.all(np.isfinite(arr)):
        raise BridgeError("tensor contains non-finite entries")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise BridgeError(f"{path}: bad magic")
    version, dtype_code, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise BridgeError(f"{path}: unsupported version {version}")
    if dtype_code != DTYPE_F32:
        raise BridgeError(f"{path}: dtype code must be {DTYPE_F32} (f32), got {dtype_code}")
    if ndim < 1:
        raise BridgeError(f"{path}: rank must be >= 1")
    head_end = 16 + 8 * ndim
    if len(raw) < head_end:
        raise BridgeError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 16)
    count = 1
    for d in dims:
        if d == 0 or d > 2**32:
            raise BridgeError(f"{path}: bad dimension {d}")
        count *= d
    if count * 4 != len(raw) - head_end:
        raise BridgeError(f"{path}: payload size mismatch")
    return np.frombuffer(raw[head_end:], dtype="<f4").reshape(dims).copy()
