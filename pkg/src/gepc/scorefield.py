"""Evaluable score fields: exact analytic Gaussians/GMMs under the DDPM
forward process, replayable tabulated stores, perturbed fields, and the
Tweedie denoiser.

Analytic fields support t=0 (the undiffused marginal, alpha_bar=1) so the
same objects serve both the diffusion pipeline and static closed-form
checks.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from . import group as grp
from .rng import Stream
from .schedule import NoiseSchedule
from .tensor import Field, read_gtf


class LookupMissError(KeyError):
    """Tabulated or bridge-backed score lookup failed."""


@dataclass(frozen=True)
class GaussianSpec:
    """N(mu, diag(var)) with var a scalar (isotropic) or per-entry Field."""

    mu: Field
    var: float | Field = 1.0

    def __post_init__(self):
        v = self.variances()
        if np.any(v <= 0.0):
            raise ValueError("variances must be positive")

    def variances(self) -> np.ndarray:
        if isinstance(self.var, Field):
            if self.var.shape != self.mu.shape:
                raise ValueError("variance field must match the mean shape")
            return self.var.data
        return np.full(self.mu.shape, float(self.var))


@dataclass(frozen=True)
class GmmSpec:
    weights: tuple[float, ...]
    components: tuple[GaussianSpec, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("GmmSpec needs at least one component")
        if len(self.weights) != len(self.components):
            raise ValueError("weights and components must align")
        w = np.asarray(self.weights)
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")


class ScoreField:
    """Base class: a pure map (x, t) -> score field."""

    def eval_score(self, x: Field, t: int) -> Field:
        raise NotImplementedError


def _diffused_params(spec: GaussianSpec, s: NoiseSchedule, t: int):
    ab = s.alpha_bar(t)
    mean = np.sqrt(ab) * spec.mu.data
    var = ab * spec.variances() + (1.0 - ab)
    return mean, var


class AnalyticGaussian(ScoreField):
    def __init__(self, spec: GaussianSpec, schedule: NoiseSchedule):
        self.spec = spec
        self.schedule = schedule

    def eval_score(self, x: Field, t: int) -> Field:
        mean, var = _diffused_params(self.spec, self.schedule, t)
        return Field(-(x.data - mean) / var)

    def log_density(self, x: Field, t: int) -> float:
        mean, var = _diffused_params(self.spec, self.schedule, t)
        d = x.data - mean
        return float(-0.5 * np.sum(d * d / var + np.log(2.0 * np.pi * var)))

    def eval_score_batch(self, xs: np.ndarray, t: int) -> np.ndarray:
        mean, var = _diffused_params(self.spec, self.schedule, t)
        return -(xs - mean[None]) / var[None]

    def sample_batch(self, n: int, t: int, stream) -> np.ndarray:
        """n draws from the diffused marginal at time t."""
        mean, var = _diffused_params(self.spec, self.schedule, t)
        size = int(np.prod(mean.shape))
        eps = stream.normals(n * size).reshape((n,) + mean.shape)
        return mean[None] + np.sqrt(var)[None] * eps


class AnalyticGmm(ScoreField):
    """Exact score of a diagonal-covariance mixture diffused to time t.

    The score is the responsibility-weighted sum of component scores, with
    responsibilities computed from the diffused component densities.
    """

    def __init__(self, spec: GmmSpec, schedule: NoiseSchedule):
        self.spec = spec
        self.schedule = schedule
        self._means = np.stack([c.mu.data for c in spec.components])
        self._vars = np.stack([c.variances() for c in spec.components])
        self._logw = np.log(np.asarray(spec.weights))

    def _diffused(self, t: int):
        ab = self.schedule.alpha_bar(t)
        return np.sqrt(ab) * self._means, ab * self._vars + (1.0 - ab)

    def _component_logpdfs(self, x: Field, t: int) -> np.ndarray:
        means, variances = self._diffused(t)
        d = x.data[None] - means
        per = -0.5 * (d * d / variances + np.log(2.0 * np.pi * variances))
        return self._logw + per.reshape(len(self.spec.components), -1).sum(axis=1)

    def log_density(self, x: Field, t: int) -> float:
        lp = self._component_logpdfs(x, t)
        m = lp.max()
        return float(m + np.log(np.sum(np.exp(lp - m))))

    def eval_score(self, x: Field, t: int) -> Field:
        means, variances = self._diffused(t)
        lp = self._component_logpdfs(x, t)
        resp = np.exp(lp - lp.max())
        resp /= resp.sum()
        comp_scores = -(x.data[None] - means) / variances
        return Field(np.tensordot(resp, comp_scores, axes=1))

    def eval_score_batch(self, xs: np.ndarray, t: int) -> np.ndarray:
        """Vectorised scores for a (n, C, H, W) batch (same math as
        eval_score)."""
        means, variances = self._diffused(t)
        d = xs[:, None] - means[None]
        per = -0.5 * (d * d / variances[None] + np.log(2.0 * np.pi * variances[None]))
        lp = self._logw[None] + per.reshape(xs.shape[0], len(self.spec.components), -1).sum(
            axis=2
        )
        lp -= lp.max(axis=1, keepdims=True)
        resp = np.exp(lp)
        resp /= resp.sum(axis=1, keepdims=True)
        comp_scores = -d / variances[None]
        return np.einsum("nk,nkchw->nchw", resp, comp_scores)


_STREAM_SURROGATE = 0xBEEF


class SubspaceGatedField(ScoreField):
    """Surrogate for a trained score network fitted to an analytic mixture.

    A trained network is accurate where it sees training signal and
    extrapolates arbitrarily where it does not.  This field models that:
    inside the trust region it returns the exact mixture score, and outside
    it the output blends smoothly toward a frozen seeded field with unit
    per-entry energy (scaled to the typical score magnitude), which carries
    no information about the input.

    The trust statistic is the smallest per-component normalised distance
    between the projection of x onto the span of the component means and
    the projected (diffused) component means.  The blend weight is
    sigmoid((stat - theta) / width), so it is a smooth monotone function of
    that single scalar.  When the mean subspace is invariant under the
    transport set (e.g. constant-intensity means), the gate value is itself
    transport-invariant, so the exact branch contributes no transport
    residual and all residual energy comes from the frozen branch.
    """

    def __init__(self, spec: GmmSpec, schedule: NoiseSchedule, seed: int,
                 theta: float = 3.0, width: float = 0.5, floor: float = 0.08):
        self.spec = spec
        self.schedule = schedule
        self.theta = float(theta)
        self.width = float(width)
        self.floor = float(floor)
        self._exact = AnalyticGmm(spec, schedule)
        shape = spec.components[0].mu.data.shape
        size = int(np.prod(shape))
        means = np.stack([c.mu.data.ravel() for c in spec.components])
        _, svals, vt = np.linalg.svd(means, full_matrices=False)
        rank = max(1, int(np.sum(svals > 1e-9 * svals[0])))
        self._basis = vt[:rank]
        self._means_flat = means
        self._comp_var = np.array(
            [float(np.mean(c.variances())) for c in spec.components])
        junk = Stream(seed, _STREAM_SURROGATE).normal_field(shape)
        junk *= np.sqrt(size) / np.sqrt(np.sum(junk * junk))
        self._junk = junk

    def _gate(self, flat: np.ndarray, t: int) -> np.ndarray:
        """Blend weight in (0, 1) for a (n, C*H*W) batch."""
        ab = self.schedule.alpha_bar(t)
        proj = flat @ self._basis.T
        centers = np.sqrt(ab) * (self._means_flat @ self._basis.T)
        sd = np.sqrt(ab * self._comp_var + (1.0 - ab))
        dist = np.linalg.norm(proj[:, None, :] - centers[None], axis=2)
        stat = (dist / sd[None]).min(axis=1)
        return 1.0 / (1.0 + np.exp(-(stat - self.theta) / self.width))

    def eval_score_batch(self, xs: np.ndarray, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        mean_var = float(np.mean(self._comp_var))
        sd = np.sqrt(ab * mean_var + (1.0 - ab))
        # Baseline fit error as a fraction of the typical score magnitude,
        # scaled like 1/sd to mirror the low-noise blow-up of score error.
        lam = self._gate(xs.reshape(xs.shape[0], -1), t)
        lam = np.minimum(lam + self.floor * np.sqrt(mean_var) / sd, 1.0)
        lam = lam[:, None, None, None]
        ref = 1.0 / sd
        exact = self._exact.eval_score_batch(xs, t)
        mix = (1.0 - lam) * exact + lam * (ref * self._junk[None])
        # Renormalise each field to the exact score's magnitude so the blend
        # only rotates the score direction: a gated sample keeps a plausible
        # energy while pointing somewhere uninformative.
        axes = tuple(range(1, xs.ndim))
        n_exact = np.sqrt(np.sum(exact * exact, axis=axes, keepdims=True))
        n_mix = np.sqrt(np.sum(mix * mix, axis=axes, keepdims=True))
        return mix * (n_exact / np.maximum(n_mix, 1e-300))

    def eval_score(self, x: Field, t: int) -> Field:
        return Field(self.eval_score_batch(x.data[None], t)[0])


def symmetrize(spec: GmmSpec, G: grp.GroupSet) -> GmmSpec:
    """Orbit-expand a mixture so its marginal is exactly invariant under G.

    Each component mean is transported by every element; diagonal variances
    follow the entry permutation (signs square away, hence the abs)."""
    weights = []
    components = []
    for w, comp in zip(spec.weights, spec.components):
        var_field = (
            comp.var if isinstance(comp.var, Field) else Field(np.full(comp.mu.shape, comp.var))
        )
        for g in G:
            mu_g = grp.apply(g, comp.mu)
            var_g = Field(np.abs(grp.apply(g, var_field).data))
            weights.append(w / len(G))
            components.append(GaussianSpec(mu_g, var_g))
    return GmmSpec(tuple(weights), tuple(components))


# ---------------------------------------------------------------------------
# Perturbed fields and error generators (operationalize score error terms)


class ErrorGenerator:
    def __call__(self, x: Field, t: int) -> Field:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantError(ErrorGenerator):
    """e(x, t) = a fixed field, independent of x and t."""

    value: Field

    def __call__(self, x: Field, t: int) -> Field:
        return self.value


class SmoothError(ErrorGenerator):
    """Sum of a few sinusoids of <w_j, x> with seeded phases and directions.

    Smooth and globally Lipschitz: |e(x) - e(y)| <= sum_j a_j ||w_j|| |x-y|.
    """

    def __init__(self, shape, seed: int, amplitude: float = 0.1, n_waves: int = 3,
                 frequency: float = 1.0):
        self.shape = tuple(shape)
        self.amplitude = amplitude
        n = int(np.prod(shape))
        st = Stream(seed, 0x5E0)
        self.freqs = frequency * st.normal_field((n_waves, 1, n)).reshape(n_waves, n)
        self.phases = 2.0 * np.pi * st.substream(1).uniforms(n_waves)
        dirs = st.substream(2).normal_field((n_waves, 1, n)).reshape(n_waves, n)
        self.dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def __call__(self, x: Field, t: int) -> Field:
        xv = x.data.ravel()
        phases = self.freqs @ xv + self.phases
        out = self.amplitude * (np.sin(phases) @ self.dirs)
        return Field(out.reshape(self.shape))


class FrozenGaussianError(ErrorGenerator):
    """A fixed seeded Gaussian field, optionally box-smoothed along x, used
    as an x-independent error."""

    def __init__(self, shape, seed: int, amplitude: float = 0.1, bandwidth: int = 0):
        st = Stream(seed, 0xF60)
        raw = st.normal_field(tuple(shape))
        if bandwidth > 0:
            k = 2 * bandwidth + 1
            kernel = np.ones(k) / k
            for axis in (1, 2):
                raw = np.apply_along_axis(
                    lambda v: np.convolve(np.concatenate([v, v, v]), kernel, "same")[
                        len(v) : 2 * len(v)
                    ],
                    axis,
                    raw,
                )
        self.value = Field(amplitude * raw)

    def __call__(self, x: Field, t: int) -> Field:
        return self.value


class Perturbed(ScoreField):
    """base score plus an additive error field."""

    def __init__(self, base: ScoreField, error: ErrorGenerator):
        self.base = base
        self.error = error

    def eval_score(self, x: Field, t: int) -> Field:
        return self.base.eval_score(x, t) + self.error(x, t)


# ---------------------------------------------------------------------------
# Tabulated stores (replay of external backbone evaluations)


class TabulatedScoreField:
    """Scores keyed by (sample-id, group-element index, timestep).

    Entry (sample, g, t) holds the raw score evaluated at the g-transported
    noisy input; transport back to the canonical frame happens in the
    scoring layer.
    """

    def __init__(self, entries: dict[tuple[str, int, int], Field] | None = None):
        self.entries = dict(entries or {})

    def put(self, sample_id: str, g_index: int, t: int, score: Field) -> None:
        self.entries[(sample_id, g_index, t)] = score

    def lookup(self, sample_id: str, g_index: int, t: int) -> Field:
        key = (sample_id, g_index, t)
        if key not in self.entries:
            raise LookupMissError(f"no tabulated score for {key}")
        return self.entries[key]

    @classmethod
    def from_dir(cls, path) -> "TabulatedScoreField":
        store = cls()
        pat = re.compile(r"^score_(.+)_(\d+)_(\d+)\.gtf$")
        for name in sorted(os.listdir(path)):
            m = pat.match(name)
            if m:
                store.put(m.group(1), int(m.group(2)), int(m.group(3)),
                          read_gtf(os.path.join(path, name)))
        return store


# ---------------------------------------------------------------------------
# Tweedie denoiser and Gaussian posterior covariance


def tweedie_denoise(sf: ScoreField, s: NoiseSchedule, x: Field, t: int) -> Field:
    """Posterior mean of x0 given x_t: (x_t + sigma_t^2 s(x_t)) / sqrt(ab_t)."""
    ab = s.alpha_bar(t)
    score = sf.eval_score(x, t)
    return Field((x.data + (1.0 - ab) * score.data) / np.sqrt(ab))


def posterior_cov_gaussian(spec: GaussianSpec, s: NoiseSchedule, t: int) -> Field:
    """Diagonal posterior covariance of x0 given x_t for a Gaussian prior:
    (Sigma0^-1 + sigma_tilde^-2 I)^-1 with sigma_tilde^2 = sigma^2/ab."""
    ab = s.alpha_bar(t)
    sigma_tilde_sq = (1.0 - ab) / ab
    v0 = spec.variances()
    if sigma_tilde_sq == 0.0:
        return Field(np.zeros_like(v0))
    return Field(1.0 / (1.0 / v0 + 1.0 / sigma_tilde_sq))


def gaussian_posterior_mean(spec: GaussianSpec, s: NoiseSchedule, x: Field, t: int) -> Field:
    """Closed-form Gaussian-conditioning posterior mean E[x0 | x_t]
    (independent oracle for the Tweedie route)."""
    ab = s.alpha_bar(t)
    sig_sq = 1.0 - ab
    v0 = spec.variances()
    if sig_sq == 0.0:
        return Field(x.data / np.sqrt(ab))
    post_var = 1.0 / (1.0 / v0 + ab / sig_sq)
    mean = post_var * (np.sqrt(ab) / sig_sq * x.data + spec.mu.data / v0)
    return Field(mean)


# ---------------------------------------------------------------------------
# GMM spec files: plain-text `key = value` sections


def save_gmm_spec(spec: GmmSpec, path) -> None:
    lines = ["format = gmm-v1"]
    c, h, w = spec.components[0].mu.shape
    lines.append(f"shape = {c}x{h}x{w}")
    for wgt, comp in zip(spec.weights, spec.components):
        lines.append("[component]")
        lines.append(f"weight = {float(wgt)!r}")
        lines.append("mean = " + " ".join(repr(float(v)) for v in comp.mu.data.ravel()))
        if isinstance(comp.var, Field):
            lines.append("var = " + " ".join(repr(float(v)) for v in comp.var.data.ravel()))
        else:
            lines.append(f"var = {float(comp.var)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_gmm_spec(path) -> GmmSpec:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not raw or raw[0].replace(" ", "") != "format=gmm-v1":
        raise ValueError(f"{path}: not a gmm-v1 spec file")
    shape = None
    weights: list[float] = []
    components: list[GaussianSpec] = []
    current: dict[str, str] = {}
    base_dir = os.path.dirname(os.path.abspath(path))

    def flush():
        if not current:
            return
        weights.append(float(current["weight"]))
        if "mean_gtf" in current:
            mu = read_gtf(os.path.join(base_dir, current["mean_gtf"]))
        else:
            mu = Field.from_flat(*shape, [float(v) for v in current["mean"].split()])
        var_vals = current["var"].split()
        var: float | Field
        if len(var_vals) == 1:
            var = float(var_vals[0])
        else:
            var = Field.from_flat(*shape, [float(v) for v in var_vals])
        components.append(GaussianSpec(mu, var))
        current.clear()

    for ln in raw[1:]:
        if ln == "[component]":
            flush()
            continue
        key, _, value = ln.partition("=")
        key, value = key.strip(), value.strip()
        if key == "shape":
            shape = tuple(int(v) for v in value.split("x"))
        else:
            current[key] = value
    flush()
    return GmmSpec(tuple(weights), tuple(components))
