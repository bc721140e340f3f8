"""Core GEPC statistics: transported scores, residual fields, pooling,
base normalisation, the three per-timestep features, timestep aggregation,
residual maps, and compute accounting.

Scoring a sample evaluates, per kept timestep and Monte-Carlo draw, one
reference score and one score per group element; every feature reuses the
same evaluations.  All reductions run in canonical (t, g, mc) order so
results are byte-identical regardless of parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import group as grp
from .rng import Stream
from .schedule import NoiseSchedule, forward_sample
from .scorefield import ScoreField, TabulatedScoreField
from .tensor import Field, SpatialMap, dot, sq_norm

EPS_B_DEFAULT = 1e-12
FEATURES = ("s", "cos", "pair")


@dataclass(frozen=True)
class GepcConfig:
    group: grp.GroupSet
    timesteps: tuple[int, ...]
    weights: tuple[float, ...]
    mc_samples: int = 1
    pool: str = "mean"          # "mean" | "topk"
    topk_k: int = 1
    features: tuple[str, ...] = ("s",)
    eps_b: float = EPS_B_DEFAULT

    def __post_init__(self):
        if len(self.timesteps) != len(self.weights):
            raise ValueError("timesteps and weights must align")
        if len(set(self.timesteps)) != len(self.timesteps):
            raise ValueError("kept timesteps must be distinct")
        w = np.asarray(self.weights)
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.pool not in ("mean", "topk"):
            raise ValueError(f"unknown pool mode {self.pool!r}")
        for f in self.features:
            if f not in FEATURES:
                raise ValueError(f"unknown feature {f!r}")
        if self.eps_b < 0.0:
            raise ValueError("eps_b must be >= 0")


@dataclass
class FeatureMatrix:
    """Per-sample feature scalars z[(t, f)], plus raw per-(t, g) residual
    energies when map export requests them."""

    values: dict[tuple[int, str], float]
    residual_energies: dict[tuple[int, int], float] = dc_field(default_factory=dict)
    degenerate: bool = False


@dataclass(frozen=True)
class ComputeLedger:
    forwards: int
    jvps: int = 0

    @classmethod
    def for_run(cls, n_group: int, n_timesteps: int, mc_samples: int) -> "ComputeLedger":
        return cls(forwards=(1 + n_group) * n_timesteps * mc_samples, jvps=0)


class SampleEvaluator:
    """Supplies raw (untransported) scores s(P_g x_t, t) and the reference
    score s(x_t, t) for one sample."""

    def reference(self, sample_id: str, x_t: Field, t: int) -> Field:
        raise NotImplementedError

    def transported_input_score(self, sample_id: str, g_index: int,
                                xg: Field, t: int) -> Field:
        raise NotImplementedError


class FieldEvaluator(SampleEvaluator):
    def __init__(self, sf: ScoreField):
        self.sf = sf

    def reference(self, sample_id, x_t, t):
        return self.sf.eval_score(x_t, t)

    def transported_input_score(self, sample_id, g_index, xg, t):
        return self.sf.eval_score(xg, t)


class TabulatedEvaluator(SampleEvaluator):
    """Replays stored evaluations; requires the identity element in the
    group so the reference score has a key."""

    def __init__(self, store: TabulatedScoreField, G: grp.GroupSet):
        self.store = store
        ids = [i for i, g in enumerate(G) if g.kind == "id"]
        if not ids:
            raise ValueError("tabulated scoring requires the identity element")
        self.identity_index = ids[0]

    def reference(self, sample_id, x_t, t):
        return self.store.lookup(sample_id, self.identity_index, t)

    def transported_input_score(self, sample_id, g_index, xg, t):
        return self.store.lookup(sample_id, g_index, t)


def transported_score(sf: ScoreField, g: grp.GroupElement, x_t: Field, t: int) -> Field:
    """Score in the canonical frame: P_g^-1 s(P_g x_t, t)."""
    return grp.inverse_apply(g, sf.eval_score(grp.apply(g, x_t), t))


def residual_field(sf: ScoreField, g: grp.GroupElement, x_t: Field, t: int) -> Field:
    return transported_score(sf, g, x_t, t) - sf.eval_score(x_t, t)


def energy_map(f: Field) -> SpatialMap:
    """Channel-averaged pointwise squared norm."""
    return SpatialMap(np.mean(f.data * f.data, axis=0))


def magnitude_map(f: Field) -> SpatialMap:
    """Channel-averaged pointwise absolute value."""
    return SpatialMap(np.mean(np.abs(f.data), axis=0))


def pool(energy: SpatialMap, mode: str, k: int = 1) -> float:
    if mode == "mean":
        return float(np.mean(energy.data))
    if mode == "topk":
        flat = energy.data.ravel()
        if not 1 <= k <= flat.size:
            raise ValueError(f"topk k={k} out of range 1..{flat.size}")
        return float(np.mean(np.sort(flat)[-k:]))
    raise ValueError(f"unknown pool mode {mode!r}")


def base_normalizer(s_ref: Field, cfg: GepcConfig) -> float:
    return pool(energy_map(s_ref), cfg.pool, cfg.topk_k)


def _noise_for(seed: int, sample_index: int, mc: int, shape) -> Field:
    # one eps per (sample, mc-index), shared across g and t at that index
    return Field(Stream(seed, 0xE5, sample_index, mc).normal_field(shape))


@dataclass
class _DrawStats:
    s_ref: Field
    b: float
    transported: list[Field]
    residual_energies: list[float]


def _evaluate_draw(evaluator: SampleEvaluator, sample_id: str, x_t: Field,
                   t: int, cfg: GepcConfig) -> _DrawStats:
    s_ref = evaluator.reference(sample_id, x_t, t)
    b = base_normalizer(s_ref, cfg)
    transported = []
    res_energies = []
    for gi, g in enumerate(cfg.group):
        raw = evaluator.transported_input_score(sample_id, gi, grp.apply(g, x_t), t)
        s_tilde = grp.inverse_apply(g, raw)
        transported.append(s_tilde)
        res_energies.append(pool(energy_map(s_tilde - s_ref), cfg.pool, cfg.topk_k))
    return _DrawStats(s_ref, b, transported, res_energies)


def _feature_values(stats: _DrawStats, s_ref: Field, cfg: GepcConfig):
    denom = stats.b + cfg.eps_b
    out = {}
    degenerate = False
    if "s" in cfg.features:
        out["s"] = float(np.mean([e / denom for e in stats.residual_energies]))
    if "cos" in cfg.features:
        ref_norm = np.sqrt(sq_norm(s_ref))
        vals = []
        for s_tilde in stats.transported:
            tn = np.sqrt(sq_norm(s_tilde))
            if ref_norm <= 0.0 or tn <= 0.0:
                vals.append(0.0)
                degenerate = True
            else:
                vals.append(1.0 - dot(s_tilde, s_ref) / (tn * ref_norm))
        out["cos"] = float(np.mean(vals))
    if "pair" in cfg.features:
        n = len(stats.transported)
        if n < 2:
            out["pair"] = 0.0
            degenerate = True
        else:
            vals = []
            for i in range(n):
                for j in range(i + 1, n):
                    diff = stats.transported[i] - stats.transported[j]
                    vals.append(pool(energy_map(diff), cfg.pool, cfg.topk_k) / denom)
            out["pair"] = float(np.mean(vals))
    return out, degenerate


def compute_features(evaluator: SampleEvaluator, schedule: NoiseSchedule,
                     sample_id: str, sample_index: int, x0: Field,
                     cfg: GepcConfig, seed: int,
                     keep_energies: bool = False) -> FeatureMatrix:
    """All enabled per-timestep features for one sample, averaged over the
    Monte-Carlo draws."""
    values: dict[tuple[int, str], float] = {}
    energies: dict[tuple[int, int], float] = {}
    degenerate = False
    for t in cfg.timesteps:
        acc = {f: 0.0 for f in cfg.features}
        for mc in range(cfg.mc_samples):
            eps = _noise_for(seed, sample_index, mc, x0.shape)
            x_t = forward_sample(schedule, x0, t, eps)
            stats = _evaluate_draw(evaluator, sample_id, x_t, t, cfg)
            vals, degen = _feature_values(stats, stats.s_ref, cfg)
            degenerate = degenerate or degen
            for f, v in vals.items():
                acc[f] += v
            if keep_energies:
                for gi, e in enumerate(stats.residual_energies):
                    energies[(t, gi)] = energies.get((t, gi), 0.0) + e / cfg.mc_samples
        for f in cfg.features:
            values[(t, f)] = acc[f] / cfg.mc_samples
    return FeatureMatrix(values, energies, degenerate)


def gepc_score(evaluator: SampleEvaluator, schedule: NoiseSchedule,
               sample_id: str, sample_index: int, x0: Field,
               cfg: GepcConfig, seed: int) -> tuple[float, FeatureMatrix, ComputeLedger]:
    """Timestep-weighted default feature, the full FeatureMatrix, and the
    compute ledger F=(1+|G|)|T|m, J=0."""
    feats = compute_features(evaluator, schedule, sample_id, sample_index, x0, cfg, seed)
    default_feature = "s" if "s" in cfg.features else cfg.features[0]
    score = float(
        sum(w * feats.values[(t, default_feature)]
            for t, w in zip(cfg.timesteps, cfg.weights))
    )
    ledger = ComputeLedger.for_run(len(cfg.group), len(cfg.timesteps), cfg.mc_samples)
    return score, feats, ledger


def score_norm_statistic(evaluator: SampleEvaluator, schedule: NoiseSchedule,
                         sample_id: str, sample_index: int, x0: Field,
                         cfg: GepcConfig, seed: int) -> float:
    """Baseline statistic pool(||s||^2), aggregated like the GEPC score.

    Used only as the score-magnitude comparison; shares the noise draws
    with the GEPC path."""
    total = 0.0
    for t, w in zip(cfg.timesteps, cfg.weights):
        acc = 0.0
        for mc in range(cfg.mc_samples):
            eps = _noise_for(seed, sample_index, mc, x0.shape)
            x_t = forward_sample(schedule, x0, t, eps)
            acc += base_normalizer(evaluator.reference(sample_id, x_t, t), cfg)
        total += w * acc / cfg.mc_samples
    return total


def residual_map(evaluator: SampleEvaluator, schedule: NoiseSchedule,
                 sample_id: str, sample_index: int, x0: Field,
                 cfg: GepcConfig, seed: int) -> SpatialMap:
    """Pre-pooling residual magnitude map: channel-averaged |residual|,
    averaged over g and mc draws and w_t-weighted over timesteps."""
    acc = np.zeros((x0.height, x0.width))
    for t, w in zip(cfg.timesteps, cfg.weights):
        for mc in range(cfg.mc_samples):
            eps = _noise_for(seed, sample_index, mc, x0.shape)
            x_t = forward_sample(schedule, x0, t, eps)
            s_ref = evaluator.reference(sample_id, x_t, t)
            per_g = np.zeros_like(acc)
            for gi, g in enumerate(cfg.group):
                raw = evaluator.transported_input_score(sample_id, gi, grp.apply(g, x_t), t)
                s_tilde = grp.inverse_apply(g, raw)
                per_g += magnitude_map(s_tilde - s_ref).data
            acc += w * per_g / (len(cfg.group) * cfg.mc_samples)
    return SpatialMap(acc)


def quantile(values: np.ndarray, p: float) -> float:
    """q_p by linear interpolation between order statistics at rank
    p*(n-1), zero-indexed."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of empty data")
    rank = p * (v.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, v.size - 1)
    frac = rank - lo
    return float(v[lo] * (1.0 - frac) + v[hi] * frac)


def global_map_normalizer(id_maps: list[SpatialMap]) -> tuple[float, bool]:
    """v_global = median over the ID pool of each map's 0.99-quantile.

    Returns (v_global, degenerate); degenerate is set when every map is
    all-zero."""
    if not id_maps:
        raise ValueError("empty ID map pool")
    qs = np.array([quantile(m.data, 0.99) for m in id_maps])
    v = quantile(qs, 0.5)
    return v, bool(v <= 0.0)
