"""Reader and writer for the simple binary tensor format.

Layout: 4-byte magic ``GTF1``, then four little-endian uint32 values
(ndim = 3, C, H, W), then C*H*W float32 values in row-major order.  The
bridge keeps its own implementation so it stays installable without the
scoring package.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GTF1"
_HEADER = struct.Struct("<IIII")


class GtfFormatError(Exception):
    pass


def write_gtf(data: np.ndarray, path) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise GtfFormatError(f"expected a 3-d array, got ndim={arr.ndim}")
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(3, c, h, w))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_gtf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise GtfFormatError(f"{path}: bad magic")
    if len(raw) < 4 + _HEADER.size:
        raise GtfFormatError(f"{path}: truncated header")
    ndim, c, h, w = _HEADER.unpack_from(raw, 4)
    if ndim != 3 or min(c, h, w) < 1:
        raise GtfFormatError(f"{path}: bad dimensions {(ndim, c, h, w)}")
    payload = raw[4 + _HEADER.size:]
    expected = c * h * w * 4
    if len(payload) != expected:
        raise GtfFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(
        c, h, w)
