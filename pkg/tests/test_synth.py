"""Synthetic dataset generation: determinism, invariance, moment control."""

import numpy as np
import pytest

from gepc import group as grp
from gepc.scorefield import AnalyticGmm
from gepc.schedule import linear_schedule
from gepc.synth import (DatasetSpec, default_shift, generate, id_mixture,
                        load_dataset, moment_preserving_scale, sample_name,
                        second_moment, write_dataset)
from gepc.tensor import Field


def _id_spec(n=50, seed=3, split=0, shape=(2, 4, 4)):
    return DatasetSpec(kind="invariant_gmm", shape=shape, n=n, seed=seed,
                       split=split)


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(kind="unknown", shape=(1, 2, 2), n=1, seed=0)
    with pytest.raises(ValueError):
        DatasetSpec(kind="invariant_gmm", shape=(1, 2, 2), n=0, seed=0)
    with pytest.raises(ValueError):
        DatasetSpec(kind="shifted", shape=(1, 2, 2), n=1, seed=0)


def test_id_mixture_means_are_constant_fields():
    mix = id_mixture(_id_spec())
    for comp in mix.components:
        assert np.ptp(comp.mu.data) == 0.0
    assert len(mix.components) == 4
    assert sum(mix.weights) == pytest.approx(1.0)


def test_id_mixture_shared_across_splits():
    a = id_mixture(_id_spec(split=0))
    b = id_mixture(_id_spec(split=1))
    for ca, cb in zip(a.components, b.components):
        np.testing.assert_array_equal(ca.mu.data, cb.mu.data)


def test_id_mixture_score_field_is_transport_equivariant():
    # constant means are fixed points of every grid transport, so the
    # analytic mixture score is exactly equivariant
    sched = linear_schedule(1000)
    sf = AnalyticGmm(id_mixture(_id_spec(shape=(1, 4, 4))), sched)
    x = Field(np.random.default_rng(0).normal(size=(1, 4, 4)))
    for g in grp.default_group(4, 4):
        s_ref = sf.eval_score(x, 136)
        back = grp.inverse_apply(g, sf.eval_score(grp.apply(g, x), 136))
        np.testing.assert_allclose(back.data, s_ref.data, atol=1e-12)


def test_generate_deterministic_and_split_dependent():
    a = generate(_id_spec())
    b = generate(_id_spec())
    c = generate(_id_spec(split=1))
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.data, fb.data)
    assert any(np.any(fa.data != fc.data) for fa, fc in zip(a, c))


def test_generate_prefix_stability():
    # sample i depends only on (seed, split, i), not on n
    a = generate(_id_spec(n=10))
    b = generate(_id_spec(n=50))
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.data, fb.data)


def test_law_invariance_under_transports():
    # the marginal law is transport-invariant: transported samples have the
    # same empirical mean within MC error
    spec = _id_spec(n=10_000, shape=(1, 4, 4))
    xs = np.stack([f.data for f in generate(spec)])
    tol = 4.0 / np.sqrt(spec.n)
    for g in grp.default_group(4, 4):
        gx = grp.apply_batch(g, xs)
        np.testing.assert_allclose(gx.mean(axis=0), xs.mean(axis=0),
                                   atol=tol)


def test_default_shift_norm_and_direction():
    s = default_shift((2, 3, 3), 1.5)
    assert np.sqrt(np.sum(s ** 2)) == pytest.approx(1.5, rel=1e-12)
    assert np.ptp(s) == 0.0  # constant direction


def test_moment_preserving_shift():
    spec = _id_spec(n=20_000, shape=(1, 3, 3))
    mix = id_mixture(spec)
    shift = default_shift((1, 3, 3), 1.0)
    scale = moment_preserving_scale(mix, shift)
    ood = DatasetSpec(kind="shifted", shape=(1, 3, 3), n=spec.n, seed=3,
                      split=2, shift=shift, preserve_second_moment=True)
    id_xs = np.stack([f.data for f in generate(spec)])
    ood_xs = np.stack([f.data for f in generate(ood)])
    m_id = np.mean(np.sum(id_xs.reshape(spec.n, -1) ** 2, axis=1))
    m_ood = np.mean(np.sum(ood_xs.reshape(spec.n, -1) ** 2, axis=1))
    assert 0.0 < scale < 1.0
    assert m_ood == pytest.approx(m_id, rel=0.05)
    assert m_ood == pytest.approx(second_moment(mix), rel=0.05)


def test_shifted_without_preservation_changes_moment():
    n = 20_000
    ood = DatasetSpec(kind="shifted", shape=(1, 3, 3), n=n, seed=3, split=2,
                      shift=default_shift((1, 3, 3), 2.0),
                      preserve_second_moment=False)
    base = _id_spec(n=n, shape=(1, 3, 3))
    m_id = np.mean([np.sum(f.data ** 2) for f in generate(base)])
    m_ood = np.mean([np.sum(f.data ** 2) for f in generate(ood)])
    assert m_ood > m_id * 1.1


def test_sample_name_format():
    assert sample_name(0) == "sample_00000.gtf"
    assert sample_name(123) == "sample_00123.gtf"


def test_write_and_load_dataset(tmp_path):
    spec = _id_spec(n=5)
    write_dataset(spec, tmp_path / "ds")
    manifest = (tmp_path / "ds" / "manifest.txt").read_text()
    assert "kind = invariant_gmm" in manifest
    assert "spec_sha256 = " in manifest
    samples = load_dataset(tmp_path / "ds")
    assert [sid for sid, _ in samples] == [f"sample_{i:05d}" for i in range(5)]
    fresh = generate(spec)
    for (_, loaded), f in zip(samples, fresh):
        np.testing.assert_allclose(loaded.data, f.data, atol=1e-6)


def test_write_dataset_byte_stable(tmp_path):
    spec = _id_spec(n=3)
    write_dataset(spec, tmp_path / "a")
    write_dataset(spec, tmp_path / "b")
    for name in ("manifest.txt", "sample_00000.gtf"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
