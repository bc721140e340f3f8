"""Closed-form residual oracles and the two bound verifiers."""

import numpy as np
import pytest

from gepc import group as grp
from gepc.rng import Stream
from gepc.schedule import linear_schedule
from gepc.scorefield import (AnalyticGaussian, ConstantError, GaussianSpec,
                             SmoothError)
from gepc.tensor import Field
from gepc.theory import (analytic_lipschitz, anisotropic_source_spec,
                         c4_oracle, equivariance_check, identity_checks,
                         mc_mean_shift, mean_shift_oracle, score_sq_norm_stats,
                         verify_prop1, verify_prop2)

SCHED = linear_schedule(1000)


def test_mean_shift_oracle_closed_form():
    mu = Field(np.full((1, 2, 2), 0.5))  # ||mu||^2 = 1
    assert mean_shift_oracle(mu, 1.0) == pytest.approx(2.0)
    assert mean_shift_oracle(mu.scale(2.0), 1.0) == pytest.approx(8.0)
    assert mean_shift_oracle(mu, 2.0) == pytest.approx(2.0 / 16.0)


def test_c4_oracle_values():
    assert c4_oracle(1.0, 2.0) == pytest.approx(45.0 / 32.0)
    assert c4_oracle(1.0, 1.0) == 0.0


def test_mc_mean_shift_matches_oracle():
    mu = Field(np.full((1, 2, 4), 0.5))  # d = 8, ||mu||^2 = 2
    est = mc_mean_shift(mu, 1.0, n=20_000, seed=0)
    assert est.mean == pytest.approx(mean_shift_oracle(mu, 1.0), rel=0.05)
    assert est.stderr > 0.0


def test_score_sq_norm_is_mean_independent():
    d = 8
    a = score_sq_norm_stats(Field(np.zeros((1, 2, 4))), 1.0, 20_000, 0)
    b = score_sq_norm_stats(Field(np.full((1, 2, 4), 2.0 / np.sqrt(d))),
                            1.0, 20_000, 1)
    assert a.mean == pytest.approx(d, rel=0.05)
    assert abs(a.mean - b.mean) < 3.0 * np.hypot(a.stderr, b.stderr)


def _gaussian(shape=(1, 4, 4), seed=0, var=1.0):
    mu = Field(np.random.default_rng(seed).normal(size=shape))
    return AnalyticGaussian(GaussianSpec(mu, var), SCHED)


def _probe_batch(n, shape, seed):
    return np.random.default_rng(seed).normal(size=(n,) + shape)


def test_prop1_zero_error_is_tight():
    base = _gaussian(seed=1)
    err = ConstantError(Field(np.zeros((1, 4, 4))))
    xs = _probe_batch(2000, (1, 4, 4), 2)
    G = grp.GroupSet((grp.IDENTITY, grp.GroupElement("flipx")))
    rep = verify_prop1(base, err, xs, G, t=50)
    assert rep.passed
    assert abs(rep.measured.mean - rep.B.mean) <= max(
        3.0 * np.hypot(rep.measured.stderr, rep.B.stderr), 1e-12)


def test_prop1_nonzero_error_sandwich():
    base = _gaussian(seed=3)
    err = SmoothError((1, 4, 4), seed=4, amplitude=0.2)
    xs = _probe_batch(2000, (1, 4, 4), 5)
    G = grp.GroupSet((grp.IDENTITY, grp.GroupElement("rot180")))
    assert verify_prop1(base, err, xs, G, t=50).passed


def test_anisotropic_source_spec_layout():
    spec = anisotropic_source_spec(8, 0.1)
    var = spec.variances().ravel()
    assert var[-1] == pytest.approx(0.01)
    np.testing.assert_allclose(var[:-1], np.linspace(1.0, 2.0, 7))


def test_analytic_lipschitz_linear_field():
    spec = anisotropic_source_spec(8, 0.1)
    t = 136
    ab = SCHED.alpha_bar(t)
    expect = 1.0 / (ab * 0.01 + (1.0 - ab))
    assert analytic_lipschitz(spec, SCHED, t) == pytest.approx(expect,
                                                               rel=1e-12)


def test_prop2_upper_bound_on_linear_field():
    spec = anisotropic_source_spec(16, 0.1)
    sf = AnalyticGaussian(spec, SCHED)
    t = 136
    ab = SCHED.alpha_bar(t)
    sd = np.sqrt(ab * spec.variances() + (1.0 - ab))
    st = Stream(0, 0x7E0)
    xs = st.normals(200 * 16).reshape(200, 1, 1, 16) * sd[None]
    G = grp.GroupSet((grp.IDENTITY, grp.FLIP_LEADING))
    rep = verify_prop2(sf, xs, G, t, L=analytic_lipschitz(spec, SCHED, t))
    assert rep.upper_pass_rate == 1.0


def test_equivariance_check_flags_asymmetry():
    probes = [Field(np.random.default_rng(s).normal(size=(1, 4, 4)))
              for s in range(5)]
    G = grp.GroupSet((grp.IDENTITY, grp.GroupElement("flipx")))
    sym = AnalyticGaussian(GaussianSpec(Field(np.zeros((1, 4, 4))), 1.0),
                           SCHED)
    ok, worst = equivariance_check(sym, G, probes, (1, 136), 1e-10)
    assert ok and worst < 1e-10
    asym = _gaussian(seed=6)
    ok, worst = equivariance_check(asym, G, probes, (1, 136), 1e-10)
    assert not ok and worst > 1e-3


def test_identity_checks_on_exact_field():
    spec = GaussianSpec(Field(np.random.default_rng(7).normal(size=(1, 3, 3))),
                        1.3)
    sf = AnalyticGaussian(spec, SCHED)
    probes = [Field(np.random.default_rng(s).normal(size=(1, 3, 3)))
              for s in range(8, 11)]
    out = identity_checks(spec, SCHED, probes, (1, 50, 136), sf=sf)
    assert out["posterior_mean_max_abs"] < 1e-8
    assert out["posterior_cov_max_rel"] < 1e-4
