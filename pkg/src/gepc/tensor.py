"""Dense C x H x W tensors and the GTF binary file format.

Fields are immutable after construction: the backing numpy array is marked
read-only, so instances can be shared freely across threads.  Payloads are
stored as float32 on disk and float64 in memory, so every sum of squares is
accumulated at double precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

GTF_MAGIC = b"GTF1"

# Dims are u32 on disk; cap the element count so a corrupt header cannot
# trigger a huge allocation.
_MAX_ELEMENTS = 1 << 31


class GtfError(Exception):
    """Base class for GTF read/write failures."""


class BadMagicError(GtfError):
    pass


class TruncatedPayloadError(GtfError):
    pass


class DimensionError(GtfError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    """A C x H x W real tensor (float64 in memory)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"Field requires a 3-d array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"Field dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Field entries must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Field":
        return cls(np.zeros((channels, height, width)))

    @classmethod
    def from_flat(cls, channels: int, height: int, width: int, values) -> "Field":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != channels * height * width:
            raise ShapeMismatchError(
                f"expected {channels * height * width} values, got {arr.size}"
            )
        return cls(arr.reshape(channels, height, width))

    def __add__(self, other: "Field") -> "Field":
        _check_same_shape(self, other)
        return Field(self.data + other.data)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_shape(self, other)
        return Field(self.data - other.data)

    def scale(self, factor: float) -> "Field":
        return Field(self.data * factor)


@dataclass(frozen=True)
class SpatialMap:
    """An H x W real map (e.g. a pre-pooling residual magnitude map)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"SpatialMap requires a 2-d array, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("SpatialMap entries must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _check_same_shape(a: Field, b: Field):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def sq_norm(f: Field) -> float:
    """Sum of squared entries, accumulated in float64."""
    return float(np.dot(f.data.ravel(), f.data.ravel()))


def dot(a: Field, b: Field) -> float:
    _check_same_shape(a, b)
    return float(np.dot(a.data.ravel(), b.data.ravel()))


def write_gtf(f: Field, path) -> None:
    """Write a field as GTF: "GTF1", u32 ndim=3, u32 C,H,W, float32 payload.

    All integers and floats are little-endian; the payload is row-major
    (c, i, j).
    """
    c, h, w = f.shape
    header = GTF_MAGIC + struct.pack("<IIII", 3, c, h, w)
    payload = f.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_gtf(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != GTF_MAGIC:
        raise BadMagicError(f"{path}: not a GTF file")
    if len(raw) < 20:
        raise TruncatedPayloadError(f"{path}: header truncated")
    ndim, c, h, w = struct.unpack("<IIII", raw[4:20])
    if ndim != 3:
        raise DimensionError(f"{path}: ndim must be 3, got {ndim}")
    if min(c, h, w) < 1 or c * h * w > _MAX_ELEMENTS:
        raise DimensionError(f"{path}: bad dims {(c, h, w)}")
    n = c * h * w
    payload = raw[20:]
    if len(payload) < 4 * n:
        raise TruncatedPayloadError(
            f"{path}: expected {4 * n} payload bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload[: 4 * n], dtype="<f4").astype(np.float64)
    return Field(values.reshape(c, h, w))


def write_pgm(m: SpatialMap, v: float, path) -> None:
    """8-bit binary PGM preview: values clipped at v, linearly mapped to
    0-255; a non-positive v yields an all-black image."""
    h, w = m.data.shape
    if v > 0.0:
        scaled = np.clip(m.data / v, 0.0, 1.0)
    else:
        scaled = np.zeros_like(m.data)
    pix = np.floor(scaled * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())
