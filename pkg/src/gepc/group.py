"""Finite image-transform operators acting on fields as entry permutations.

All elements act as signed permutations of tensor entries, hence are
orthogonal: norms and inner products are preserved exactly.  Channels are
never mixed.

Index maps (out <- in), with the last axis as x:
    flipx:    out[c,i,j] = in[c,i,W-1-j]
    flipy:    out[c,i,j] = in[c,H-1-i,j]
    rot90:    out[c,i,j] = in[c,j,W-1-i]   (counter-clockwise)
    rot180:   out[c,i,j] = in[c,H-1-i,W-1-j]
    shiftx k: out[c,i,j] = in[c,i,(j-k) mod W]
    shifty k: out[c,i,j] = in[c,(i-k) mod H,j]

Three extra kinds exist for closed-form checks only and are excluded from
default_group: ``negate`` (x -> -x), ``prot90`` (planar 90-degree rotation
of a 1x1x2 field), and ``fliplead`` (reverses the leading W-1 entries of
the last axis, fixing the final one).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Field

_KINDS = {
    "id",
    "flipx",
    "flipy",
    "rot90",
    "rot180",
    "shiftx",
    "shifty",
    "negate",
    "prot90",
    "fliplead",
}


class NonSquareRotationError(ValueError):
    pass


@dataclass(frozen=True)
class GroupElement:
    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown group element kind {self.kind!r}")

    def token(self) -> str:
        if self.kind in ("shiftx", "shifty"):
            return f"{self.kind}:{self.k}"
        return self.kind


IDENTITY = GroupElement("id")
NEGATE = GroupElement("negate")
PLANAR_ROT90 = GroupElement("prot90")
FLIP_LEADING = GroupElement("fliplead")


@dataclass(frozen=True)
class GroupSet:
    """An ordered set of elements with uniform sampling; the order is the
    canonical enumeration order for deterministic reductions."""

    elements: tuple[GroupElement, ...]

    def __post_init__(self):
        if not self.elements:
            raise ValueError("GroupSet must be non-empty")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def tokens(self) -> str:
        return ",".join(g.token() for g in self.elements)


def apply(g: GroupElement, f: Field) -> Field:
    a = f.data
    if g.kind == "id":
        return f
    if g.kind == "flipx":
        return Field(a[:, :, ::-1])
    if g.kind == "flipy":
        return Field(a[:, ::-1, :])
    if g.kind == "rot90":
        if f.height != f.width:
            raise NonSquareRotationError(
                f"rot90 requires H == W, got {f.height}x{f.width}"
            )
        return Field(np.rot90(a, 1, axes=(1, 2)))
    if g.kind == "rot180":
        return Field(a[:, ::-1, ::-1])
    if g.kind == "shiftx":
        return Field(np.roll(a, g.k, axis=2))
    if g.kind == "shifty":
        return Field(np.roll(a, g.k, axis=1))
    if g.kind == "negate":
        return Field(-a)
    if g.kind == "prot90":
        if f.shape != (1, 1, 2):
            raise ValueError("prot90 acts on 1x1x2 fields only")
        return Field(np.array([[[-a[0, 0, 1], a[0, 0, 0]]]]))
    if g.kind == "fliplead":
        out = a.copy()
        out[:, :, : f.width - 1] = a[:, :, f.width - 2 :: -1]
        return Field(out)
    raise AssertionError(g.kind)


def apply_batch(g: GroupElement, a: np.ndarray) -> np.ndarray:
    """The same index maps as apply(), over a stacked (n, C, H, W) array."""
    if a.ndim != 4:
        raise ValueError("apply_batch expects a (n, C, H, W) array")
    W = a.shape[3]
    if g.kind == "id":
        return a
    if g.kind == "flipx":
        return a[:, :, :, ::-1]
    if g.kind == "flipy":
        return a[:, :, ::-1, :]
    if g.kind == "rot90":
        if a.shape[2] != a.shape[3]:
            raise NonSquareRotationError(
                f"rot90 requires H == W, got {a.shape[2]}x{a.shape[3]}"
            )
        return np.rot90(a, 1, axes=(2, 3))
    if g.kind == "rot180":
        return a[:, :, ::-1, ::-1]
    if g.kind == "shiftx":
        return np.roll(a, g.k, axis=3)
    if g.kind == "shifty":
        return np.roll(a, g.k, axis=2)
    if g.kind == "negate":
        return -a
    if g.kind == "prot90":
        if a.shape[1:] != (1, 1, 2):
            raise ValueError("prot90 acts on 1x1x2 fields only")
        return np.stack([-a[..., 1], a[..., 0]], axis=-1)
    if g.kind == "fliplead":
        out = a.copy()
        out[:, :, :, : W - 1] = a[:, :, :, W - 2 :: -1]
        return out
    raise AssertionError(g.kind)


def inverse_apply_batch(g: GroupElement, a: np.ndarray) -> np.ndarray:
    if g.kind in ("rot90", "prot90"):
        out = a
        for _ in range(3):
            out = apply_batch(g, out)
        return out
    return apply_batch(inverse(g), a)


def inverse(g: GroupElement) -> GroupElement:
    if g.kind in ("id", "flipx", "flipy", "rot180", "negate", "fliplead"):
        return g
    if g.kind in ("shiftx", "shifty"):
        return GroupElement(g.kind, -g.k)
    # rot90 and prot90 invert as three forward applications; handled in
    # inverse_apply, the element itself has no single-kind inverse here.
    return g


def inverse_apply(g: GroupElement, f: Field) -> Field:
    if g.kind in ("rot90", "prot90"):
        out = f
        for _ in range(3):
            out = apply(g, out)
        return out
    return apply(inverse(g), f)


def default_group(height: int, width: int) -> GroupSet:
    """The default transport set: identity, flips, rotations, 1-pixel
    circular shifts.  rot90 is dropped (with a warning) on non-square
    fields."""
    if height < 2 or width < 2:
        raise ValueError("default_group requires H, W >= 2")
    elements = [IDENTITY, GroupElement("flipx"), GroupElement("flipy")]
    if height == width:
        elements.append(GroupElement("rot90"))
    else:
        warnings.warn(
            f"rot90 omitted from default group on non-square {height}x{width} fields"
        )
    elements += [
        GroupElement("rot180"),
        GroupElement("shiftx", 1),
        GroupElement("shifty", 1),
    ]
    return GroupSet(tuple(elements))


def parse_group(tokens: str) -> GroupSet:
    """Parse config tokens like ``id,flipx,rot90,shiftx:1``."""
    elements = []
    for tok in tokens.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" in tok:
            kind, _, arg = tok.partition(":")
            elements.append(GroupElement(kind.strip(), int(arg)))
        else:
            elements.append(GroupElement(tok))
    return GroupSet(tuple(elements))
