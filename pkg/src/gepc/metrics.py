"""Detection metrics: AUROC (two independent routes), FPR at fixed TPR,
and average-precision AUPR.  OOD samples carry the positive label and
higher scores mean more anomalous.
"""

from __future__ import annotations

import numpy as np

BRUTE_FORCE_LIMIT = 10_000


def auroc_brute(id_scores, ood_scores) -> float:
    """Pairwise-count AUROC: ties between an ID and an OOD score count 1/2."""
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc requires non-empty score sets")
    gt = (b[:, None] > a[None, :]).sum()
    eq = (b[:, None] == a[None, :]).sum()
    return (gt + 0.5 * eq) / (a.size * b.size)


def auroc_ranksum(id_scores, ood_scores) -> float:
    """Mann-Whitney AUROC via average ranks (ties share their mean rank)."""
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc requires non-empty score sets")
    combined = np.concatenate([a, b])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[a.size:].sum()
    u = rank_sum - b.size * (b.size + 1) / 2.0
    return u / (a.size * b.size)


def auroc(id_scores, ood_scores) -> float:
    """Cross-checked AUROC: both routes must agree to 1e-12 on small inputs."""
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    value = auroc_ranksum(a, b)
    if a.size <= BRUTE_FORCE_LIMIT and b.size <= BRUTE_FORCE_LIMIT:
        brute = auroc_brute(a, b)
        if abs(brute - value) > 1e-12:
            raise AssertionError(
                f"auroc cross-check failed: brute={brute!r} ranksum={value!r}")
    return value


def sign_invariant_auroc(id_scores, ood_scores) -> float:
    """max(A, 1-A): separation regardless of score orientation."""
    a = auroc(id_scores, ood_scores)
    return max(a, 1.0 - a)


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    """FPR at the threshold that detects at least `tpr` of the OOD set.

    The threshold is the k-th largest OOD score with k = ceil(tpr * n_ood);
    ID samples scoring >= threshold are false positives.
    """
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("fpr_at_tpr requires non-empty score sets")
    k = int(np.ceil(tpr * b.size))
    tau = np.sort(b)[::-1][k - 1]
    return float(np.mean(a >= tau))


def aupr(id_scores, ood_scores) -> float:
    """Average precision with OOD as the positive class.

    Thresholds sweep the distinct scores in descending order;
    AP = sum over steps of (recall gain) * precision.
    """
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("aupr requires non-empty score sets")
    thresholds = np.unique(np.concatenate([a, b]))[::-1]
    ap = 0.0
    prev_recall = 0.0
    for tau in thresholds:
        tp = float(np.sum(b >= tau))
        fp = float(np.sum(a >= tau))
        recall = tp / b.size
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


METRICS_HEADER = "pair_id,n_id,n_ood,auroc,fpr_at_95tpr,aupr,auroc_sign_invariant"


def metrics_row(pair_id: str, id_scores, ood_scores) -> tuple:
    """All detection metrics for one ID/OOD score pair."""
    a = auroc(id_scores, ood_scores)
    return (
        pair_id,
        len(id_scores),
        len(ood_scores),
        a,
        fpr_at_tpr(id_scores, ood_scores),
        aupr(id_scores, ood_scores),
        max(a, 1.0 - a),
    )


def write_metrics_csv(path, rows: list[tuple]) -> None:
    """Deterministic metric CSV, one row per scored ID/OOD pair."""
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            pair_id, n_id, n_ood = row[0], row[1], row[2]
            values = ",".join(repr(float(v)) for v in row[3:])
            fh.write(f"{pair_id},{n_id},{n_ood},{values}\n")
