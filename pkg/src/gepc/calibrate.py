"""ID-only timestep selection and calibration of feature matrices into a
final OOD-high anomaly score.

Conventions fixed here (documented because they matter for reproduction):
population (1/n) standard deviations everywhere; the coefficient of
variation uses std / (|mean| + 1e-12); KDE bandwidth is
0.9 * min(std, IQR/1.34) * n^(-1/5), floored at 1e-9 * (1 + |median|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, quantile

CV_EPS = 1e-12
KDE_LOG_FLOOR = np.log(1e-300)
SIGMA_FLOOR = 1e-12
MVN_RIDGE = 1e-6

CALIBRATION_MODES = ("kde", "zscore", "raw", "mvn")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TimestepSelection:
    candidates: tuple[int, ...]
    cv: dict[int, float]
    kept: tuple[int, ...]
    weights: tuple[float, ...]
    weight_mode: str


def population_std(values: np.ndarray) -> float:
    return float(np.std(values))


def coefficient_of_variation(values: np.ndarray) -> float:
    return population_std(values) / (abs(float(np.mean(values))) + CV_EPS)


def select_timesteps(id_stats: dict[int, np.ndarray], K: int,
                     weight_mode: str = "none") -> TimestepSelection:
    """Keep the K lowest-CV candidates (ties toward smaller t)."""
    candidates = tuple(sorted(id_stats))
    if not 1 <= K <= len(candidates):
        raise ValueError(f"K={K} out of range 1..{len(candidates)}")
    if weight_mode not in ("none", "inv_cv"):
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    cv = {}
    for t in candidates:
        vals = np.asarray(id_stats[t], dtype=np.float64)
        if vals.size < 2:
            raise InsufficientDataError(f"candidate t={t} has fewer than 2 ID values")
        cv[t] = coefficient_of_variation(vals)
    ranked = sorted(candidates, key=lambda t: (cv[t], t))
    kept = tuple(sorted(ranked[:K]))
    if weight_mode == "none":
        weights = tuple(1.0 / K for _ in kept)
    else:
        raw = np.array([1.0 / (cv[t] + CV_EPS) for t in kept])
        weights = tuple(raw / raw.sum())
    return TimestepSelection(candidates, cv, kept, weights, weight_mode)


@dataclass
class KdeCell:
    centers: np.ndarray
    bandwidth: float

    def log_density(self, z: float) -> float:
        h = self.bandwidth
        u = (z - self.centers) / h
        m = np.max(-0.5 * u * u)
        val = m + np.log(np.sum(np.exp(-0.5 * u * u - m)))
        val += -np.log(self.centers.size * h * np.sqrt(2.0 * np.pi))
        return float(max(val, KDE_LOG_FLOOR))


@dataclass
class ZscoreCell:
    mu: float
    sigma: float

    def log_score(self, z: float) -> float:
        return -0.5 * ((z - self.mu) / self.sigma) ** 2


@dataclass
class MvnModel:
    mean: np.ndarray
    precision: np.ndarray

    def mahalanobis_sq(self, z: np.ndarray) -> float:
        d = z - self.mean
        return float(d @ self.precision @ d)


@dataclass
class Calibrator:
    mode: str
    cells: tuple[tuple[int, str], ...]
    kde: dict[tuple[int, str], KdeCell] | None = None
    zscore: dict[tuple[int, str], ZscoreCell] | None = None
    mvn: MvnModel | None = None


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb bandwidth with a robust IQR spread estimate."""
    n = values.size
    std = population_std(values)
    iqr = quantile(values, 0.75) - quantile(values, 0.25)
    spread = min(std, iqr / 1.34) if iqr > 0.0 else std
    h = 0.9 * spread * n ** (-0.2)
    floor = 1e-9 * (1.0 + abs(quantile(values, 0.5)))
    return max(h, floor)


def _feature_table(id_features: list[FeatureMatrix]) -> tuple[tuple[tuple[int, str], ...], np.ndarray]:
    cells = tuple(sorted(id_features[0].values))
    table = np.array([[fm.values[c] for c in cells] for fm in id_features])
    return cells, table


def fit_calibrator(id_features: list[FeatureMatrix], mode: str) -> Calibrator:
    if mode not in CALIBRATION_MODES:
        raise ValueError(f"unknown calibration mode {mode!r}")
    if len(id_features) < 2:
        raise InsufficientDataError("calibration requires at least 2 ID samples")
    cells, table = _feature_table(id_features)
    if mode == "raw":
        return Calibrator("raw", cells)
    if mode == "kde":
        kde = {
            c: KdeCell(table[:, j].copy(), silverman_bandwidth(table[:, j]))
            for j, c in enumerate(cells)
        }
        return Calibrator("kde", cells, kde=kde)
    if mode == "zscore":
        zs = {
            c: ZscoreCell(float(np.mean(table[:, j])),
                          max(population_std(table[:, j]), SIGMA_FLOOR))
            for j, c in enumerate(cells)
        }
        return Calibrator("zscore", cells, zscore=zs)
    # mvn
    d = len(cells)
    if len(id_features) < d + 2:
        raise InsufficientDataError(f"mvn needs at least {d + 2} ID samples for d={d}")
    mean = table.mean(axis=0)
    centered = table - mean
    cov = centered.T @ centered / table.shape[0]
    ridge = MVN_RIDGE * np.trace(cov) / d
    cov = cov + ridge * np.eye(d)
    try:
        precision = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise InsufficientDataError(f"singular covariance after ridge: {exc}")
    return Calibrator("mvn", cells, mvn=MvnModel(mean, precision))


def anomaly_score(feat: FeatureMatrix, cal: Calibrator, sel: TimestepSelection,
                  agg_feat: str = "mean", agg_t: str = "wmean") -> float:
    """OOD-high anomaly score from calibrated features.

    kde/zscore return the negated weighted ID log-score; mvn returns the
    squared Mahalanobis distance; raw aggregates the raw feature values.
    """
    if agg_feat not in ("sum", "mean"):
        raise ValueError(f"unknown agg_feat {agg_feat!r}")
    if agg_t not in ("mean", "wmean"):
        raise ValueError(f"unknown agg_t {agg_t!r}")
    for c in cal.cells:
        if c not in feat.values:
            raise KeyError(f"feature cell {c} missing from sample features")
    if cal.mode == "mvn":
        z = np.array([feat.values[c] for c in cal.cells])
        return cal.mvn.mahalanobis_sq(z)

    kept = sel.kept
    weights = sel.weights if agg_t == "wmean" else tuple(1.0 / len(kept) for _ in kept)
    features = sorted({f for (_, f) in cal.cells})
    agg = np.sum if agg_feat == "sum" else np.mean
    total = 0.0
    for t, w in zip(kept, weights):
        if cal.mode == "raw":
            per_f = [feat.values[(t, f)] for f in features]
            total += w * float(agg(per_f))
        elif cal.mode == "zscore":
            per_f = [cal.zscore[(t, f)].log_score(feat.values[(t, f)]) for f in features]
            total += w * float(agg(per_f))
        else:
            per_f = [cal.kde[(t, f)].log_density(feat.values[(t, f)]) for f in features]
            total += w * float(agg(per_f))
    if cal.mode == "raw":
        return total
    return -total


# ---------------------------------------------------------------------------
# Plain-text persistence


def save_calibrator(cal: Calibrator, path) -> None:
    lines = ["format = gepc-calibrator-v1", f"mode = {cal.mode}"]
    lines.append("cells = " + ";".join(f"{t}:{f}" for t, f in cal.cells))
    for c in cal.cells:
        t, f = c
        lines.append(f"[cell {t} {f}]")
        if cal.mode == "kde":
            cell = cal.kde[c]
            lines.append(f"bandwidth = {float(cell.bandwidth)!r}")
            lines.append("centers = " + " ".join(repr(float(v)) for v in cell.centers))
        elif cal.mode == "zscore":
            cell = cal.zscore[c]
            lines.append(f"mu = {float(cell.mu)!r}")
            lines.append(f"sigma = {float(cell.sigma)!r}")
    if cal.mode == "mvn":
        lines.append("[mvn]")
        lines.append("mean = " + " ".join(repr(float(v)) for v in cal.mvn.mean))
        lines.append("precision = " + " ".join(repr(float(v)) for v in cal.mvn.precision.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_calibrator(path) -> Calibrator:
    with open(path) as fh:
        raw = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if raw[0].replace(" ", "") != "format=gepc-calibrator-v1":
        raise ValueError(f"{path}: not a gepc-calibrator-v1 file")
    mode = raw[1].partition("=")[2].strip()
    cells = tuple(
        (int(tok.split(":")[0]), tok.split(":")[1])
        for tok in raw[2].partition("=")[2].strip().split(";")
    )
    kde: dict = {}
    zscore: dict = {}
    mvn = None
    current: tuple[int, str] | None = None
    params: dict[str, str] = {}

    def flush():
        nonlocal mvn
        if current is None or not params:
            return
        if current == "mvn":
            mean = np.array([float(v) for v in params["mean"].split()])
            prec = np.array([float(v) for v in params["precision"].split()])
            d = mean.size
            mvn = MvnModel(mean, prec.reshape(d, d))
        elif mode == "kde":
            kde[current] = KdeCell(
                np.array([float(v) for v in params["centers"].split()]),
                float(params["bandwidth"]),
            )
        elif mode == "zscore":
            zscore[current] = ZscoreCell(float(params["mu"]), float(params["sigma"]))

    for ln in raw[3:]:
        if ln.startswith("[cell "):
            flush()
            params = {}
            _, t, f = ln.strip("[]").split()
            current = (int(t), f)
        elif ln.startswith("[mvn]"):
            flush()
            params = {}
            current = "mvn"
        else:
            key, _, value = ln.partition("=")
            params[key.strip()] = value.strip()
    flush()
    return Calibrator(mode, cells, kde=kde or None, zscore=zscore or None, mvn=mvn)


def save_selection(sel: TimestepSelection, path) -> None:
    lines = ["format = gepc-selection-v1",
             "candidates = " + ",".join(str(t) for t in sel.candidates)]
    for t in sel.candidates:
        lines.append(f"cv_{t} = {float(sel.cv[t])!r}")
    lines.append("kept = " + ",".join(str(t) for t in sel.kept))
    lines.append("weights = " + ",".join(repr(float(w)) for w in sel.weights))
    lines.append(f"weight_mode = {sel.weight_mode}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_selection(path) -> TimestepSelection:
    kv = {}
    with open(path) as fh:
        for ln in fh:
            key, _, value = ln.partition("=")
            kv[key.strip()] = value.strip()
    if kv.get("format") != "gepc-selection-v1":
        raise ValueError(f"{path}: not a gepc-selection-v1 file")
    candidates = tuple(int(v) for v in kv["candidates"].split(","))
    cv = {t: float(kv[f"cv_{t}"]) for t in candidates}
    kept = tuple(int(v) for v in kv["kept"].split(","))
    weights = tuple(float(v) for v in kv["weights"].split(","))
    return TimestepSelection(candidates, cv, kept, weights, kv["weight_mode"])
