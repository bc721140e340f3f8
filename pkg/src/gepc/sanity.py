"""Seeded verification suite wiring the closed-form oracles, bound
propositions, and denoiser identities into named pass/fail checks.

Each check compares a measured value against its expected value at a fixed
tolerance; `run_checks` returns the full report and the CLI renders it as a
table plus `sanity.csv`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import group as grp
from .rng import Stream
from .schedule import NoiseSchedule, linear_schedule
from .scorefield import (AnalyticGaussian, AnalyticGmm, ConstantError,
                         FrozenGaussianError, GaussianSpec, GmmSpec,
                         Perturbed, SmoothError, symmetrize)
from .tensor import Field
from . import theory

_STREAM_SANITY = 0x5A17


@dataclass
class CheckResult:
    name: str
    expected: float
    measured: float
    stderr: float
    passed: bool


def _closed_groups(h: int, w: int) -> list[grp.GroupSet]:
    """Transport sets closed under composition (true subgroups)."""
    sets = [
        grp.GroupSet((grp.IDENTITY, grp.GroupElement("flipx"))),
        grp.GroupSet((grp.IDENTITY, grp.GroupElement("rot180"))),
        grp.GroupSet((grp.IDENTITY, grp.GroupElement("flipx"),
                      grp.GroupElement("flipy"), grp.GroupElement("rot180"))),
    ]
    if h == w:
        sets.append(grp.GroupSet((grp.IDENTITY, grp.GroupElement("rot90", 1),
                                  grp.GroupElement("rot180"),
                                  grp.GroupElement("rot90", 3))))
    return sets


def _random_gmm(shape, stream: Stream, n_components: int = 2) -> GmmSpec:
    size = int(np.prod(shape))
    means = stream.normals(n_components * size).reshape((n_components,) + tuple(shape))
    raw_w = stream.substream(1).uniforms(n_components) + 0.5
    weights = tuple(float(v) for v in raw_w / raw_w.sum())
    var = 0.5 + stream.substream(2).uniforms(n_components)
    comps = tuple(GaussianSpec(Field(means[k]), float(var[k]))
                  for k in range(n_components))
    return GmmSpec(weights, comps)


def _sample_gmm_batch(spec: GmmSpec, schedule: NoiseSchedule, t: int, n: int,
                      stream: Stream) -> np.ndarray:
    shape = spec.components[0].mu.data.shape
    size = int(np.prod(shape))
    u = stream.uniforms(n)
    cdf = np.cumsum(spec.weights)
    ks = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"),
                    len(spec.components) - 1)
    eps = stream.substream(1).normals(2 * n * size).reshape(2, n, *shape)
    ab = schedule.alpha_bar(t)
    out = np.empty((n,) + shape)
    for i, k in enumerate(ks):
        comp = spec.components[int(k)]
        x0 = comp.mu.data + np.sqrt(comp.variances()) * eps[0, i]
        out[i] = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps[1, i]
    return out


def prop1_instance(index: int, seed: int) -> theory.BoundReport:
    """One seeded (mixture, perturbation, transport set, t) sandwich check."""
    st = Stream(seed, _STREAM_SANITY, 1, index)
    shape = (1, 4, 4)
    spec = _random_gmm(shape, st.substream(0))
    schedule = linear_schedule(1000)
    t = (5, 50, 136)[index % 3]
    G = _closed_groups(4, 4)[index % 4]
    base = AnalyticGmm(spec, schedule)
    kind = index % 4
    if kind == 0:
        error = ConstantError(Field(np.zeros(shape)))
    elif kind == 1:
        amp = 0.05 + 0.3 * st.substream(1).uniforms(1)[0]
        error = ConstantError(Field(amp * st.substream(2).normal_field(shape)))
    elif kind == 2:
        error = SmoothError(shape, seed * 1000 + index, amplitude=0.2)
    else:
        error = FrozenGaussianError(shape, seed * 1000 + index, amplitude=0.3)
    xs = _sample_gmm_batch(spec, schedule, t, 4000, st.substream(3))
    return theory.verify_prop1(base, error, xs, G, t)


def prop1_zero_error(index: int) -> bool:
    return index % 4 == 0


def prop2_report(n_points: int = 1000, dim: int = 16, eps: float = 0.1,
                 t: int = 136, seed: int = 0) -> theory.CrossBackboneReport:
    """The anisotropic-source / coordinate-subspace upper-bound check with
    the analytic Lipschitz constant."""
    spec = theory.anisotropic_source_spec(dim, eps)
    schedule = linear_schedule(1000)
    sf_src = AnalyticGaussian(spec, schedule)
    st = Stream(seed, _STREAM_SANITY, 2)
    ab = schedule.alpha_bar(t)
    z = st.normals(n_points * dim).reshape(n_points, 1, 1, dim)
    xs = np.sqrt(ab * spec.variances() + (1.0 - ab)) * z
    G = grp.GroupSet((grp.IDENTITY, grp.FLIP_LEADING))
    L = theory.analytic_lipschitz(spec, schedule, t)
    return theory.verify_prop2(sf_src, xs, G, t, L=L)


def run_checks(seed: int = 0, only: str | None = None,
               score_scale: float = 1.0,
               prop1_instances: int = 12) -> list[CheckResult]:
    """All checks with fixed seeds; `only` filters by substring match.

    `score_scale` multiplies the score field used by the denoiser identity
    checks; anything but 1.0 must make them fail (fault-injection hook).
    """
    checks: list[CheckResult] = []

    def want(name: str) -> bool:
        return only is None or only in name

    def add(name, expected, measured, stderr, passed):
        checks.append(CheckResult(name, float(expected), float(measured),
                                  float(stderr), bool(passed)))

    d = 8
    if want("mean_shift"):
        for norm_sq in (0.0, 1.0, 4.0):
            mu = Field(np.full((1, 1, d), np.sqrt(norm_sq / d)))
            oracle = theory.mean_shift_oracle(mu, 1.0)
            est = theory.mc_mean_shift(mu, 1.0, 100_000, seed)
            if oracle == 0.0:
                ok = abs(est.mean) <= max(3.0 * est.stderr, 1e-12)
            else:
                ok = abs(est.mean - oracle) <= 0.02 * oracle
            add(f"mean_shift_{int(norm_sq)}", oracle, est.mean, est.stderr, ok)

    if want("c4"):
        oracle = theory.c4_oracle(1.0, 2.0)
        est = theory.mc_c4(1.0, 2.0, 100_000, seed)
        add("c4_anisotropic", oracle, est.mean, est.stderr,
            abs(est.mean - oracle) <= 0.02 * oracle)
        est0 = theory.mc_c4(1.0, 1.0, 100_000, seed)
        add("c4_isotropic", 0.0, est0.mean, est0.stderr, abs(est0.mean) < 1e-3)

    if want("blindness"):
        mu0 = Field(np.zeros((1, 1, d)))
        mu2 = Field(np.full((1, 1, d), 2.0 / np.sqrt(d)))
        s0 = theory.score_sq_norm_stats(mu0, 1.0, 100_000, seed)
        s2 = theory.score_sq_norm_stats(mu2, 1.0, 100_000, seed + 1)
        se = np.hypot(s0.stderr, s2.stderr)
        add("blindness_score_norm", s0.mean, s2.mean, se,
            abs(s0.mean - s2.mean) <= 3.0 * se)
        r0 = theory.mc_mean_shift(mu0, 1.0, 100_000, seed)
        r2 = theory.mc_mean_shift(mu2, 1.0, 100_000, seed + 1)
        contrast = r2.mean / max(abs(r0.mean), 3.0 * r0.stderr, 1e-12)
        add("blindness_residual_contrast", 10.0, contrast, 0.0, contrast > 10.0)

    if want("identity") or want("tweedie") or want("posterior"):
        shape = (1, 3, 3)
        st = Stream(seed, _STREAM_SANITY, 3)
        spec = GaussianSpec(Field(st.normal_field(shape)), 1.3)
        schedule = linear_schedule(1000)
        probes = [Field(st.substream(i + 1).normal_field(shape)) for i in range(5)]
        t_list = (1, 5, 50, 136, 500)
        sf = None
        if score_scale != 1.0:
            base = AnalyticGaussian(spec, schedule)
            sf = Perturbed(base, _ScaleError(base, score_scale - 1.0))
        rep = theory.identity_checks(spec, schedule, probes, t_list, sf=sf)
        add("tweedie_posterior_mean", 0.0, rep["posterior_mean_max_abs"], 0.0,
            rep["posterior_mean_max_abs"] <= 1e-8)
        add("posterior_cov_jacobian", 0.0, rep["posterior_cov_max_rel"], 0.0,
            rep["posterior_cov_max_rel"] <= 1e-4)

    if want("equivariance"):
        shape = (1, 4, 4)
        st = Stream(seed, _STREAM_SANITY, 4)
        G = _closed_groups(4, 4)[2]
        spec = symmetrize(_random_gmm(shape, st), G)
        sf = AnalyticGmm(spec, linear_schedule(1000))
        probes = [Field(st.substream(i + 1).normal_field(shape)) for i in range(10)]
        ok, worst = theory.equivariance_check(sf, G, probes, (1, 50, 500), 1e-10)
        add("equivariance_symmetrized_gmm", 0.0, worst, 0.0, ok)

    if want("prop1"):
        n_pass = 0
        zero_ok = True
        for i in range(prop1_instances):
            rep = prop1_instance(i, seed)
            n_pass += int(rep.passed)
            if prop1_zero_error(i):
                gap = abs(rep.measured.mean - rep.B.mean)
                slack = 3.0 * np.hypot(rep.measured.stderr, rep.B.stderr)
                zero_ok = zero_ok and gap <= max(slack, 1e-12)
        add("prop1_sandwich", prop1_instances, n_pass, 0.0,
            n_pass == prop1_instances and zero_ok)

    if want("prop2"):
        rep = prop2_report(seed=seed)
        add("prop2_upper_bound", 1.0, rep.upper_pass_rate, 0.0,
            rep.upper_pass_rate == 1.0)

    return checks


class _ScaleError:
    """Error generator that rescales a base score by a constant factor."""

    def __init__(self, base, extra: float):
        self.base = base
        self.extra = extra

    def __call__(self, x: Field, t: int) -> Field:
        return Field(self.extra * self.base.eval_score(x, t).data)


def write_sanity_csv(path, checks: list[CheckResult]) -> None:
    with open(path, "w") as fh:
        fh.write("check,expected,measured,stderr,pass\n")
        for c in checks:
            fh.write(f"{c.name},{c.expected!r},{c.measured!r},{c.stderr!r},"
                     f"{int(c.passed)}\n")


def render_report(checks: list[CheckResult]) -> str:
    lines = []
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{c.name:<{width}}  expected={c.expected:.6g}  "
                     f"measured={c.measured:.6g}  stderr={c.stderr:.3g}  {status}")
    return "\n".join(lines)
