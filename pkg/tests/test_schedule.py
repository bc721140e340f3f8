"""Noise schedule tables and the forward diffusion map.

Frozen alpha_bar values were computed independently with exact product
formulas for the linear beta schedule (T=1000, beta from 1e-4 to 0.02).
"""

import numpy as np
import pytest

from gepc.schedule import (DEFAULT_CANDIDATE_TIMESTEPS, NoiseSchedule,
                           forward_sample, linear_schedule,
                           map_levels_to_timesteps, snr_to_level)
from gepc.tensor import Field

ALPHA_BAR_REF = {
    1: 0.9999,
    5: 0.9993009943420809,
    15: 0.9964143665679072,
    136: 0.8214792379913212,
    172: 0.7330753929053085,
    1000: 4.0358297653756754e-05,
}


@pytest.fixture(scope="module")
def sched():
    return linear_schedule(1000)


@pytest.mark.parametrize("t,ref", sorted(ALPHA_BAR_REF.items()))
def test_alpha_bar_frozen(sched, t, ref):
    assert sched.alpha_bar(t) == pytest.approx(ref, rel=1e-12)


def test_alpha_bar_boundary_at_zero(sched):
    assert sched.alpha_bar(0) == 1.0
    assert sched.sigma(0) == 0.0


def test_alpha_bar_monotone_decreasing(sched):
    vals = np.array([sched.alpha_bar(t) for t in range(1, 1001)])
    assert np.all(np.diff(vals) < 0.0)


def test_sigma_consistent_with_alpha_bar(sched):
    for t in (1, 136, 1000):
        assert sched.sigma(t) == pytest.approx(
            np.sqrt(1.0 - sched.alpha_bar(t)), rel=1e-15)


def test_timestep_range_checked(sched):
    with pytest.raises(IndexError):
        sched.alpha_bar(1001)
    with pytest.raises(IndexError):
        sched.alpha_bar(-1)


def test_beta_validation():
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.0, 0.1]))
    with pytest.raises(ValueError):
        linear_schedule(0)
    with pytest.raises(ValueError):
        linear_schedule(10, beta1=0.5, betaT=0.1)


def test_snr_matches_definition(sched):
    for t in (5, 136):
        ab = sched.alpha_bar(t)
        assert sched.snr(t) == pytest.approx(ab / (1.0 - ab), rel=1e-14)


def test_snr_to_level_inverts_snr(sched):
    for t in (5, 136, 172):
        level = snr_to_level(sched.snr(t))
        assert level == pytest.approx(np.sqrt(sched.alpha_bar(t)), rel=1e-12)


def test_map_levels_recovers_default_candidates(sched):
    levels = [np.sqrt(sched.alpha_bar(t)) for t in DEFAULT_CANDIDATE_TIMESTEPS]
    assert map_levels_to_timesteps(sched, levels) == list(
        DEFAULT_CANDIDATE_TIMESTEPS)


def test_map_levels_dedupes_and_validates(sched):
    lv = np.sqrt(sched.alpha_bar(5))
    assert map_levels_to_timesteps(sched, [lv, lv]) == [5]
    with pytest.raises(ValueError):
        map_levels_to_timesteps(sched, [1.5])
    with pytest.raises(ValueError):
        map_levels_to_timesteps(sched, [])


def test_forward_sample_plug_in():
    # alpha_bar = 0.25: x_t = 0.5*x0 + sqrt(0.75)*eps
    s = NoiseSchedule(np.array([0.75]))
    x0 = Field(np.full((1, 1, 1), 2.0))
    eps = Field(np.full((1, 1, 1), 1.0))
    out = forward_sample(s, x0, 1, eps)
    assert out.data[0, 0, 0] == pytest.approx(1.0 + np.sqrt(0.75), rel=1e-15)


def test_forward_sample_at_t_zero_is_identity(sched):
    x0 = Field(np.random.default_rng(0).normal(size=(1, 2, 2)))
    eps = Field(np.ones((1, 2, 2)))
    np.testing.assert_array_equal(forward_sample(sched, x0, 0, eps).data,
                                  x0.data)
