"""Detection metrics: brute-force cross-checks and hand-computed examples."""

import numpy as np
import pytest

from gepc.metrics import (aupr, auroc, auroc_brute, auroc_ranksum,
                          fpr_at_tpr, metrics_row, sign_invariant_auroc,
                          write_metrics_csv)


def test_auroc_pair_count_example():
    # 3 of the 4 (id, ood) pairs rank ood above id
    assert auroc([0.1, 0.4], [0.3, 0.5]) == 0.75


def test_auroc_perfect_and_inverted():
    assert auroc(list(range(1, 101)), list(range(101, 201))) == 1.0
    assert auroc(list(range(101, 201)), list(range(1, 101))) == 0.0


def test_auroc_single_ood_ranked_first():
    assert auroc([0.0, 0.1, 0.2], [0.5]) == 1.0


def test_auroc_ties_count_half():
    assert auroc([1.0], [1.0]) == 0.5
    assert auroc([1.0, 1.0], [1.0, 2.0]) == 0.75


def test_auroc_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=20), rng.normal(size=30)
    assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-15)


def test_auroc_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=25), rng.normal(size=25)
    assert auroc(np.exp(a), np.exp(b)) == pytest.approx(auroc(a, b),
                                                        abs=1e-12)


def test_brute_vs_ranksum_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n_id = int(rng.integers(1, 40))
        n_ood = int(rng.integers(1, 40))
        ids = np.round(rng.normal(size=n_id), 1)
        oods = np.round(rng.normal(size=n_ood), 1)
        assert auroc_brute(ids, oods) == pytest.approx(
            auroc_ranksum(ids, oods), abs=1e-12)


def test_random_scores_auroc_near_half():
    rng = np.random.default_rng(3)
    a = rng.normal(size=10_000)
    b = rng.normal(size=10_000)
    assert auroc(a, b) == pytest.approx(0.5, abs=0.02)


def test_sign_invariant_auroc():
    assert sign_invariant_auroc([1, 2], [3, 4]) == 1.0
    assert sign_invariant_auroc([3, 4], [1, 2]) == 1.0


def test_fpr_at_tpr_oracle():
    # threshold at the 95%-TPR OOD quantile; count ID at or above it
    ids = [0.0] * 19 + [10.0]
    oods = list(np.linspace(1.0, 5.0, 20))
    assert fpr_at_tpr(ids, oods, 0.95) == pytest.approx(1 / 20)
    assert fpr_at_tpr([5.0] * 10, [1.0] * 10, 0.95) == 1.0


def test_aupr_perfect_separation():
    assert aupr([0.0, 0.1], [1.0, 2.0]) == 1.0


def test_aupr_random_near_prevalence():
    rng = np.random.default_rng(4)
    a = rng.normal(size=3000)
    b = rng.normal(size=1000)
    assert aupr(a, b) == pytest.approx(0.25, abs=0.03)


def test_metrics_row_and_csv(tmp_path):
    row = metrics_row("demo", [0.1, 0.4], [0.3, 0.5])
    assert row[:3] == ("demo", 2, 2)
    assert row[3] == 0.75
    assert row[6] == 0.75
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, [row])
    lines = path.read_text().splitlines()
    assert lines[0] == ("pair_id,n_id,n_ood,auroc,fpr_at_95tpr,aupr,"
                        "auroc_sign_invariant")
    assert lines[1].startswith("demo,2,2,0.75,")


def test_metrics_permutation_invariance():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=15), rng.normal(size=17)
    pa, pb = rng.permutation(a), rng.permutation(b)
    assert auroc(a, b) == auroc(pa, pb)
    assert fpr_at_tpr(a, b) == fpr_at_tpr(pa, pb)
    assert aupr(a, b) == aupr(pa, pb)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        auroc([], [1.0])
    with pytest.raises(ValueError):
        aupr([1.0], [])
