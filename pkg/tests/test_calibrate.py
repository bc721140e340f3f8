"""Timestep selection, density calibration, and their text persistence."""

import numpy as np
import pytest

from gepc.calibrate import (Calibrator, InsufficientDataError,
                            TimestepSelection, anomaly_score,
                            coefficient_of_variation, fit_calibrator,
                            load_calibrator, load_selection, population_std,
                            save_calibrator, save_selection,
                            select_timesteps, silverman_bandwidth)
from gepc.core import FeatureMatrix


def _features(rows):
    """rows: list of dicts {(t, f): value} -> FeatureMatrix list."""
    return [FeatureMatrix(dict(r)) for r in rows]


def test_population_std_uses_1_over_n():
    assert population_std(np.array([0.0, 2.0])) == 1.0


def test_coefficient_of_variation():
    v = np.array([1.0, 3.0])
    assert coefficient_of_variation(v) == pytest.approx(1.0 / 2.0)


def test_select_timesteps_keeps_lowest_cv():
    stats = {5: np.array([1.0, 1.1, 0.9]),       # low CV
             15: np.array([1.0, 3.0, 0.1]),      # high CV
             136: np.array([2.0, 2.05, 1.95])}   # lowest CV
    sel = select_timesteps(stats, 2, "inv_cv")
    assert sel.kept == (5, 136)
    assert sel.candidates == (5, 15, 136)
    assert sum(sel.weights) == pytest.approx(1.0)


def test_inv_cv_weights_example():
    stats = {1: np.array([1.0, 1.2]), 2: np.array([1.0, 1.9])}
    sel = select_timesteps(stats, 2, "inv_cv")
    c1 = coefficient_of_variation(stats[1])
    c2 = coefficient_of_variation(stats[2])
    w1 = (1 / c1) / (1 / c1 + 1 / c2)
    assert sel.weights == pytest.approx((w1, 1 - w1))
    # frozen plug-in: CVs (0.1, 0.3) -> weights (0.75, 0.25)
    assert (1 / 0.1) / (1 / 0.1 + 1 / 0.3) == pytest.approx(0.75)


def test_uniform_weight_mode():
    stats = {1: np.array([1.0, 1.2]), 2: np.array([5.0, 1.9])}
    sel = select_timesteps(stats, 2, "none")
    assert sel.weights == (0.5, 0.5)


def test_silverman_bandwidth_scaling():
    from gepc.core import quantile
    v = np.random.default_rng(0).normal(size=1000)
    iqr = quantile(v, 0.75) - quantile(v, 0.25)
    spread = min(population_std(v), iqr / 1.34)
    assert silverman_bandwidth(v) == pytest.approx(
        0.9 * spread * 1000 ** -0.2, rel=1e-12)


def test_silverman_bandwidth_degenerate_floor():
    assert silverman_bandwidth(np.full(50, 3.0)) > 0.0


def test_zscore_mu_plus_two_sigma_scores_two():
    rng = np.random.default_rng(1)
    feats = _features([{(5, "s"): v} for v in rng.normal(3.0, 2.0, 5000)])
    cal = fit_calibrator(feats, "zscore")
    cell = cal.zscore[(5, "s")]
    sel = TimestepSelection((5,), {5: 0.0}, (5,), (1.0,), "none")
    probe = FeatureMatrix({(5, "s"): cell.mu + 2.0 * cell.sigma})
    assert anomaly_score(probe, cal, sel) == pytest.approx(2.0, rel=1e-12)


def test_kde_scores_tail_points_higher():
    rng = np.random.default_rng(2)
    feats = _features([{(5, "s"): v} for v in rng.normal(size=2000)])
    cal = fit_calibrator(feats, "kde")
    sel = TimestepSelection((5,), {5: 0.0}, (5,), (1.0,), "none")
    center = anomaly_score(FeatureMatrix({(5, "s"): 0.0}), cal, sel)
    tail = anomaly_score(FeatureMatrix({(5, "s"): 5.0}), cal, sel)
    assert tail > center


def test_mvn_mahalanobis_example():
    rng = np.random.default_rng(3)
    feats = _features([{(5, "s"): a, (15, "s"): b}
                       for a, b in rng.normal(size=(10_000, 2))])
    cal = fit_calibrator(feats, "mvn")
    sel = TimestepSelection((5, 15), {5: 0.0, 15: 0.0}, (5, 15), (0.5, 0.5),
                            "none")
    origin = anomaly_score(FeatureMatrix({(5, "s"): 0.0, (15, "s"): 0.0}),
                           cal, sel)
    far = anomaly_score(FeatureMatrix({(5, "s"): 3.0, (15, "s"): 3.0}),
                        cal, sel)
    assert origin == pytest.approx(0.0, abs=0.05)
    assert far == pytest.approx(18.0, rel=0.10)


def test_wmean_aggregation_uses_selection_weights():
    feats = _features([{(5, "s"): v, (15, "s"): 2 * v}
                       for v in np.linspace(0, 1, 50)])
    cal = fit_calibrator(feats, "zscore")
    sel = TimestepSelection((5, 15), {5: 0.0, 15: 0.0}, (5, 15), (0.8, 0.2),
                            "none")
    probe = feats[10]
    per_t = {t: anomaly_score(
        probe, cal,
        TimestepSelection((t,), {t: 0.0}, (t,), (1.0,), "none"))
        for t in (5, 15)}
    combined = anomaly_score(probe, cal, sel)
    assert combined == pytest.approx(0.8 * per_t[5] + 0.2 * per_t[15],
                                     rel=1e-12)


def test_fit_rejects_too_few_samples():
    with pytest.raises(InsufficientDataError):
        fit_calibrator(_features([{(5, "s"): 1.0}]), "kde")


def test_selection_roundtrip(tmp_path):
    sel = TimestepSelection((5, 15, 136), {5: 0.5, 15: 0.25, 136: 0.75},
                            (15, 5), (0.625, 0.375), "inv_cv")
    path = tmp_path / "selection.txt"
    save_selection(sel, path)
    back = load_selection(path)
    assert back == sel
    assert path.read_text().startswith("format = gepc-selection-v1\n")


@pytest.mark.parametrize("mode", ["kde", "zscore", "mvn"])
def test_calibrator_roundtrip(tmp_path, mode):
    rng = np.random.default_rng(4)
    feats = _features([{(5, "s"): a, (15, "s"): b}
                       for a, b in rng.normal(size=(100, 2))])
    cal = fit_calibrator(feats, mode)
    path = tmp_path / "calibrator.txt"
    save_calibrator(cal, path)
    back = load_calibrator(path)
    assert back.mode == mode
    assert back.cells == cal.cells
    sel = TimestepSelection((5, 15), {5: 0.0, 15: 0.0}, (5, 15), (0.5, 0.5),
                            "none")
    probe = FeatureMatrix({(5, "s"): 0.7, (15, "s"): -0.2})
    assert anomaly_score(probe, back, sel) == pytest.approx(
        anomaly_score(probe, cal, sel), rel=1e-12)


def test_load_rejects_wrong_format(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("format = something-else\n")
    with pytest.raises(ValueError):
        load_selection(path)
    with pytest.raises(ValueError):
        load_calibrator(path)
