"""Counter-based deterministic random number generation.

The generator is SplitMix64 used in counter mode: a stream is identified by
a 64-bit key derived from the user seed and a tuple of stream ids, and the
i-th raw output of the stream is

    out_i = mix64(key + (i + 1) * GOLDEN)          (all mod 2^64)

where GOLDEN = 0x9E3779B97F4A7C15 and mix64 is the SplitMix64 finalizer.
The key is built by folding each stream id through the same finalizer:

    key = mix64(seed); key = mix64(key ^ id_0); key = mix64(key ^ id_1); ...

Uniforms take the top 53 bits: u_i = (out_i >> 11) * 2^-53, in [0, 1).
Normals use Box-Muller on consecutive uniform pairs (u_{2k}, u_{2k+1}):

    z_{2k}   = sqrt(-2 log(1 - u_{2k})) * cos(2 pi u_{2k+1})
    z_{2k+1} = sqrt(-2 log(1 - u_{2k})) * sin(2 pi u_{2k+1})

Everything is pure 64-bit integer and IEEE double arithmetic, so any
implementation of these rules reproduces identical streams bit-for-bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


def mix64(z: np.uint64) -> np.uint64:
    """SplitMix64 finalizer (vectorizes over uint64 arrays)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _fold(key: np.uint64, value: int) -> np.uint64:
    return mix64(key ^ np.uint64(value & 0xFFFFFFFFFFFFFFFF))


def stream_key(seed: int, *ids: int) -> np.uint64:
    key = mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    for i in ids:
        key = _fold(key, i)
    return key


class Stream:
    """A stateless, counter-addressable random stream."""

    def __init__(self, seed: int, *ids: int):
        self.key = stream_key(seed, *ids)

    def substream(self, *ids: int) -> "Stream":
        sub = Stream.__new__(Stream)
        key = self.key
        for i in ids:
            key = _fold(key, i)
        sub.key = key
        return sub

    def raw(self, n: int, offset: int = 0) -> np.ndarray:
        counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return mix64(self.key + counters * GOLDEN)

    def uniforms(self, n: int, offset: int = 0) -> np.ndarray:
        return (self.raw(n, offset) >> np.uint64(11)).astype(np.float64) * _U53

    def normals(self, n: int, offset: int = 0) -> np.ndarray:
        """n standard normals; ``offset`` must be even (pair alignment)."""
        if offset % 2 != 0:
            raise ValueError("normal offset must be even")
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs, offset)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def normal_field(self, shape: tuple[int, int, int], offset: int = 0) -> np.ndarray:
        c, h, w = shape
        return self.normals(c * h * w, offset).reshape(c, h, w)
