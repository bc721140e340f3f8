"""Seeded synthetic dataset generators for detection experiments.

The default ID distribution is a mixture of isotropic Gaussians whose
component means are constant-intensity fields with levels drawn once from
the seed.  Constant fields are fixed points of every grid transport, so the
mixture is exactly invariant under the full transport set (including
arbitrary compositions) and is its own symmetrized closure.  All randomness
flows through the counter-based generator in `rng`, with one substream per
sample, so datasets are bit-reproducible from (spec, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .rng import Stream
from .scorefield import GmmSpec, GaussianSpec
from .tensor import Field, read_gtf, write_gtf

DATASET_KINDS = ("invariant_gmm", "shifted", "anisotropic", "custom-gtf-dir")

_STREAM_DATASET = 0xDA7A
_STREAM_MEANS = 0xBA5E

DEFAULT_COMPONENTS = 4
DEFAULT_COMPONENT_STD = 0.3


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    shape: tuple[int, int, int]
    n: int
    seed: int
    shift: np.ndarray | None = None
    preserve_second_moment: bool = False
    variance_pair: tuple[float, float] = (1.0, 1.0)
    source_dir: str | None = None
    n_components: int = DEFAULT_COMPONENTS
    component_std: float = DEFAULT_COMPONENT_STD
    split: int = 0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kind == "shifted" and self.shift is None:
            raise ValueError("shifted dataset needs a shift vector")
        if self.kind == "custom-gtf-dir" and self.source_dir is None:
            raise ValueError("custom-gtf-dir dataset needs source_dir")
        if self.shift is not None and self.shift.shape != self.shape:
            raise ValueError("shift shape must match sample shape")

    def describe(self) -> str:
        parts = [
            f"kind = {self.kind}",
            f"shape = {self.shape[0]}x{self.shape[1]}x{self.shape[2]}",
            f"n = {self.n}",
            f"seed = {self.seed}",
            f"split = {self.split}",
            f"n_components = {self.n_components}",
            f"component_std = {self.component_std!r}",
        ]
        if self.shift is not None:
            parts.append("shift_norm = " + repr(float(np.sqrt(np.sum(self.shift ** 2)))))
            parts.append(f"preserve_second_moment = {self.preserve_second_moment}")
        if self.kind == "anisotropic":
            parts.append(f"variance_pair = {self.variance_pair[0]!r},{self.variance_pair[1]!r}")
        if self.source_dir is not None:
            parts.append(f"source_dir = {self.source_dir}")
        return "\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()


def id_mixture(spec: DatasetSpec) -> GmmSpec:
    """The exactly transport-invariant mixture the invariant_gmm kind samples.

    Component means are constant-intensity fields (one scalar level per
    component, drawn once from the seed).  Constant fields are unchanged by
    every entry-permuting transport, so the mixture is invariant under the
    whole transport set and is already its own symmetrized closure.
    """
    C, H, W = spec.shape
    # Levels sit on an evenly spaced grid with a small seeded jitter so the
    # components stay well resolved for any seed.
    base = np.linspace(-1.5, 1.5, spec.n_components)
    jitter = 0.1 * Stream(spec.seed, _STREAM_MEANS).normals(spec.n_components)
    levels = base + jitter
    comps = tuple(
        GaussianSpec(Field(np.full((C, H, W), level)), spec.component_std ** 2)
        for level in levels
    )
    return GmmSpec(tuple(1.0 / spec.n_components for _ in comps), comps)


def second_moment(gmm: GmmSpec) -> float:
    """E‖x‖² under the mixture (sum of per-entry variance + squared mean)."""
    total = 0.0
    for w, comp in zip(gmm.weights, gmm.components):
        total += w * float(np.sum(comp.variances() + comp.mu.data ** 2))
    return total


def moment_preserving_scale(gmm: GmmSpec, shift: np.ndarray) -> float:
    """Scale c with E‖c·x + shift‖² = E‖x‖² for a zero-mean mixture."""
    m2 = second_moment(gmm)
    s2 = float(np.sum(shift ** 2))
    if s2 >= m2:
        raise ValueError("shift norm too large to preserve the second moment")
    return float(np.sqrt(1.0 - s2 / m2))


def default_shift(shape: tuple[int, int, int], norm: float) -> np.ndarray:
    """Constant shift direction scaled to the requested Euclidean norm."""
    C, H, W = shape
    v = np.ones(shape, dtype=np.float64)
    return v * (norm / np.sqrt(C * H * W))


def _sample_gmm(gmm: GmmSpec, stream: Stream, shape) -> np.ndarray:
    size = int(np.prod(shape))
    u = stream.uniforms(1, 0)[0]
    cdf = np.cumsum(gmm.weights)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    k = min(k, len(gmm.components) - 1)
    comp = gmm.components[k]
    # offset 2 keeps the normal draws on an even counter after the uniform pair
    eps = stream.normals(size, 2).reshape(shape)
    return comp.mu.data + np.sqrt(comp.variances()) * eps


def generate(spec: DatasetSpec) -> list[Field]:
    """Materialize the dataset as a list of fields, deterministic in the seed."""
    if spec.kind == "custom-gtf-dir":
        return [f for _, f in load_dataset(spec.source_dir)][: spec.n]
    gmm = id_mixture(spec)
    scale = 1.0
    if spec.kind == "shifted" and spec.preserve_second_moment:
        scale = moment_preserving_scale(gmm, spec.shift)
    axis_scale = None
    if spec.kind == "anisotropic":
        s1, s2 = spec.variance_pair
        C, H, W = spec.shape
        axis_scale = np.ones(spec.shape)
        axis_scale[:, :, : W // 2] *= np.sqrt(s1)
        axis_scale[:, :, W // 2:] *= np.sqrt(s2)
    out = []
    for i in range(spec.n):
        stream = Stream(spec.seed, _STREAM_DATASET, spec.split, i)
        x = _sample_gmm(gmm, stream, spec.shape)
        if spec.kind == "shifted":
            x = scale * x + spec.shift
        elif spec.kind == "anisotropic":
            x = x * axis_scale
        out.append(Field(x))
    return out


def sample_name(i: int) -> str:
    return f"sample_{i:05d}.gtf"


def write_dataset(spec: DatasetSpec, out_dir) -> list[str]:
    """Write `manifest.txt` plus one GTF per sample; returns the file names."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    fields = generate(spec)
    names = []
    for i, f in enumerate(fields):
        name = sample_name(i)
        write_gtf(f, os.path.join(out_dir, name))
        names.append(name)
    lines = [spec.describe(), f"spec_sha256 = {spec.digest()}"]
    lines += [f"file = {name}" for name in names]
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return names


def load_dataset(path) -> list[tuple[str, Field]]:
    """Read back (sample_id, field) pairs from a dataset directory.

    Uses the manifest's file list when present, otherwise globs `*.gtf`
    in sorted order; sample ids are the file stems.
    """
    import os

    manifest = os.path.join(path, "manifest.txt")
    names: list[str] = []
    if os.path.exists(manifest):
        with open(manifest) as fh:
            for ln in fh:
                key, _, value = ln.partition("=")
                if key.strip() == "file":
                    names.append(value.strip())
    if not names:
        names = sorted(n for n in os.listdir(path) if n.endswith(".gtf"))
    if not names:
        raise FileNotFoundError(f"no GTF samples found in {path}")
    return [(os.path.splitext(n)[0], read_gtf(os.path.join(path, n))) for n in names]
