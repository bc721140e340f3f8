"""Command-line driver: dataset generation, timestep selection, calibration,
scoring, metrics, residual maps, sanity checks, and bridge-backed scoring.

All behaviour is driven by a line-based ``key = value`` config file with
``#`` comments and one optional ``[section]`` level.  Outputs are plain-text
artifacts written with repr-formatted floats so repeated runs are
byte-identical regardless of the worker count.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric degeneracy,
5 sanity failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import group as grp
from .calibrate import (InsufficientDataError, TimestepSelection,
                        anomaly_score, fit_calibrator, load_calibrator,
                        load_selection, save_calibrator, save_selection,
                        select_timesteps)
from .core import (ComputeLedger, FeatureMatrix, FieldEvaluator, GepcConfig,
                   SampleEvaluator, TabulatedEvaluator, compute_features,
                   gepc_score, global_map_normalizer, residual_map,
                   score_norm_statistic)
from .metrics import metrics_row, write_metrics_csv
from .rng import Stream
from .sanity import render_report, run_checks, write_sanity_csv
from .schedule import (DEFAULT_CANDIDATE_TIMESTEPS, NoiseSchedule,
                       forward_sample, linear_schedule,
                       map_levels_to_timesteps, snr_to_level)
from .scorefield import (AnalyticGmm, GmmSpec, SubspaceGatedField,
                         TabulatedScoreField, load_gmm_spec, save_gmm_spec)
from .synth import (DatasetSpec, default_shift, id_mixture, load_dataset,
                    write_dataset)
from .tensor import Field, GtfError, write_gtf, write_pgm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_SANITY = 5


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def parse_config_file(path) -> dict[str, str]:
    """``key = value`` lines with ``#`` comments; keys inside a
    ``[section]`` are flattened to ``section.key``."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    section = ""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if not section:
                    raise ConfigError(f"{path}:{lineno}: empty section name")
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            full = f"{section}.{key.strip()}" if section else key.strip()
            out[full] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    seed: int = 7
    out_dir: str = "out"
    # schedule
    T: int = 1000
    beta1: float = 1e-4
    betaT: float = 0.02
    # data
    shape: tuple[int, int, int] = (3, 8, 8)
    n_train: int = 500
    n_test: int = 250
    n_ood: int = 250
    shift_norm: float = 1.0
    preserve_second_moment: bool = True
    n_components: int = 4
    component_std: float = 0.3
    id_train: str = ""
    id_test: str = ""
    ood_test: str = ""
    # gepc
    group: str = "default"
    candidates: tuple[int, ...] = DEFAULT_CANDIDATE_TIMESTEPS
    keep_k: int = 2
    weight_t: str = "inv_cv"
    mc_samples: int = 1
    pool: str = "mean"
    topk_k: int = 1
    features: tuple[str, ...] = ("s",)
    # calibration
    density_mode: str = "kde"
    vector_mode: str = "none"
    agg_feat: str = "mean"
    agg_t: str = "wmean"
    # score field
    field_kind: str = "surrogate"
    field_spec: str = ""
    gate_theta: float = 3.0
    gate_width: float = 0.5
    fit_floor: float = 0.08
    # baseline + maps
    baseline: bool = True
    maps_samples: int = 8
    # bridge
    bridge_dir: str = ""
    bridge_timeout: float = 60.0


def _parse_bool(value: str, key: str) -> bool:
    if value in ("0", "false", "no"):
        return False
    if value in ("1", "true", "yes"):
        return True
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_shape(value: str) -> tuple[int, int, int]:
    parts = value.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"shape must be CxHxW, got {value!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def load_experiment_config(path) -> ExperimentConfig:
    kv = parse_config_file(path)
    cfg = ExperimentConfig()
    try:
        simple = {
            "seed": ("seed", int),
            "out_dir": ("out_dir", str),
            "schedule.T": ("T", int),
            "schedule.beta1": ("beta1", float),
            "schedule.betaT": ("betaT", float),
            "data.n_train": ("n_train", int),
            "data.n_test": ("n_test", int),
            "data.n_ood": ("n_ood", int),
            "data.shift_norm": ("shift_norm", float),
            "data.n_components": ("n_components", int),
            "data.component_std": ("component_std", float),
            "data.id_train": ("id_train", str),
            "data.id_test": ("id_test", str),
            "data.ood_test": ("ood_test", str),
            "gepc.group": ("group", str),
            "gepc.keep_k": ("keep_k", int),
            "gepc.weight_t": ("weight_t", str),
            "gepc.mc_samples": ("mc_samples", int),
            "gepc.pool": ("pool", str),
            "gepc.topk_k": ("topk_k", int),
            "calibrate.density_mode": ("density_mode", str),
            "calibrate.vector_mode": ("vector_mode", str),
            "calibrate.agg_feat": ("agg_feat", str),
            "calibrate.agg_t": ("agg_t", str),
            "score_field.kind": ("field_kind", str),
            "score_field.spec": ("field_spec", str),
            "score_field.gate_theta": ("gate_theta", float),
            "score_field.gate_width": ("gate_width", float),
            "score_field.fit_floor": ("fit_floor", float),
            "maps.samples": ("maps_samples", int),
            "bridge.dir": ("bridge_dir", str),
            "bridge.timeout": ("bridge_timeout", float),
        }
        for key, value in kv.items():
            if key in simple:
                attr, conv = simple[key]
                setattr(cfg, attr, conv(value))
            elif key == "data.shape":
                cfg.shape = _parse_shape(value)
            elif key == "data.preserve_second_moment":
                cfg.preserve_second_moment = _parse_bool(value, key)
            elif key == "gepc.timesteps":
                cfg.candidates = tuple(int(v) for v in value.split(","))
            elif key == "gepc.snr_levels":
                sched = linear_schedule(cfg.T, cfg.beta1, cfg.betaT)
                levels = [snr_to_level(float(v)) for v in value.split(",")]
                cfg.candidates = tuple(map_levels_to_timesteps(sched, levels))
            elif key == "gepc.features":
                cfg.features = tuple(v.strip() for v in value.split(","))
            elif key == "baseline":
                cfg.baseline = _parse_bool(value, key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not 1 <= cfg.keep_k <= len(cfg.candidates):
        raise ConfigError(
            f"keep_k = {cfg.keep_k} out of range for {len(cfg.candidates)} candidates")
    if cfg.weight_t not in ("none", "inv_cv"):
        raise ConfigError(f"unknown weight_t {cfg.weight_t!r}")
    if cfg.density_mode not in ("kde", "zscore", "raw"):
        raise ConfigError(f"unknown density_mode {cfg.density_mode!r}")
    if cfg.vector_mode not in ("none", "mvn"):
        raise ConfigError(f"unknown vector_mode {cfg.vector_mode!r}")
    if cfg.field_kind not in ("surrogate", "gmm", "tabulated"):
        raise ConfigError(f"unknown score_field kind {cfg.field_kind!r}")
    for t in cfg.candidates:
        if not 1 <= t <= cfg.T:
            raise ConfigError(f"timestep {t} outside schedule 1..{cfg.T}")


# ---------------------------------------------------------------------------
# Wiring helpers


def _schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    return linear_schedule(cfg.T, cfg.beta1, cfg.betaT)


def _group(cfg: ExperimentConfig) -> grp.GroupSet:
    if cfg.group == "default":
        return grp.default_group(cfg.shape[1], cfg.shape[2])
    return grp.parse_group(cfg.group)


def _paths(cfg: ExperimentConfig) -> dict[str, str]:
    return {
        "id_train": cfg.id_train or os.path.join(cfg.out_dir, "id_train"),
        "id_test": cfg.id_test or os.path.join(cfg.out_dir, "id_test"),
        "ood_test": cfg.ood_test or os.path.join(cfg.out_dir, "ood_test"),
        "mixture": os.path.join(cfg.out_dir, "mixture.txt"),
        "selection": os.path.join(cfg.out_dir, "selection.txt"),
        "calibrator": os.path.join(cfg.out_dir, "calibrator.txt"),
    }


def _dataset_specs(cfg: ExperimentConfig):
    base = dict(kind="invariant_gmm", shape=cfg.shape, seed=cfg.seed,
                n_components=cfg.n_components, component_std=cfg.component_std)
    id_train = DatasetSpec(n=cfg.n_train, split=0, **base)
    id_test = DatasetSpec(n=cfg.n_test, split=1, **base)
    shift = default_shift(cfg.shape, cfg.shift_norm)
    ood = DatasetSpec(kind="shifted", shape=cfg.shape, n=cfg.n_ood,
                      seed=cfg.seed, split=2, shift=shift,
                      preserve_second_moment=cfg.preserve_second_moment,
                      n_components=cfg.n_components,
                      component_std=cfg.component_std)
    return id_train, id_test, ood


def _mixture(cfg: ExperimentConfig, paths: dict[str, str]) -> GmmSpec:
    if os.path.exists(paths["mixture"]):
        return load_gmm_spec(paths["mixture"])
    return id_mixture(_dataset_specs(cfg)[0])


def _score_field(cfg: ExperimentConfig, paths: dict[str, str]):
    schedule = _schedule(cfg)
    if cfg.field_kind == "tabulated":
        if not cfg.field_spec:
            raise ConfigError("tabulated score field needs score_field.spec = <dir>")
        return TabulatedScoreField.from_dir(cfg.field_spec)
    spec = load_gmm_spec(cfg.field_spec) if cfg.field_spec else _mixture(cfg, paths)
    if cfg.field_kind == "gmm":
        return AnalyticGmm(spec, schedule)
    return SubspaceGatedField(spec, schedule, cfg.seed, theta=cfg.gate_theta,
                              width=cfg.gate_width, floor=cfg.fit_floor)


def _evaluator(cfg: ExperimentConfig, paths: dict[str, str]) -> SampleEvaluator:
    sf = _score_field(cfg, paths)
    if cfg.field_kind == "tabulated":
        return TabulatedEvaluator(sf, _group(cfg))
    return FieldEvaluator(sf)


def _gepc_config(cfg: ExperimentConfig, timesteps, weights) -> GepcConfig:
    return GepcConfig(group=_group(cfg), timesteps=tuple(timesteps),
                      weights=tuple(weights), mc_samples=cfg.mc_samples,
                      pool=cfg.pool, topk_k=cfg.topk_k, features=cfg.features)


def _load_samples(path) -> list[tuple[str, Field]]:
    if not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    samples = load_dataset(path)
    if not samples:
        raise DataError(f"no samples in {path}")
    return samples


def _feature_pass(evaluator, schedule, samples, gcfg, seed, threads,
                  keep_energies=False) -> list[FeatureMatrix]:
    """Per-sample feature computation, parallel over samples; results are
    collected in submission order so output is thread-count independent."""

    def one(args):
        i, (sid, x0) = args
        return compute_features(evaluator, schedule, sid, i, x0, gcfg, seed,
                                keep_energies=keep_energies)

    items = list(enumerate(samples))
    if threads <= 1:
        return [one(a) for a in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def _baseline_features(evaluator, schedule, samples, gcfg, seed,
                       threads) -> list[FeatureMatrix]:
    """pool(||s||^2) per kept timestep, packaged as feature matrices so the
    baseline reuses the identical calibration path."""

    def one(args):
        i, (sid, x0) = args
        values = {}
        for t in gcfg.timesteps:
            single = GepcConfig(group=gcfg.group, timesteps=(t,), weights=(1.0,),
                                mc_samples=gcfg.mc_samples, pool=gcfg.pool,
                                topk_k=gcfg.topk_k, features=("s",))
            values[(t, "s")] = score_norm_statistic(
                evaluator, schedule, sid, i, x0, single, seed)
        return FeatureMatrix(values)

    items = list(enumerate(samples))
    if threads <= 1:
        return [one(a) for a in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def _write_scores_csv(path, samples, features, scores, cells) -> None:
    header = "sample_id,score," + ",".join(f"z_{t}_{f}" for t, f in cells)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for (sid, _), fm, s in zip(samples, features, scores):
            cols = ",".join(repr(fm.values[c]) for c in cells)
            fh.write(f"{sid},{s!r},{cols}\n")


def _calibration_mode(cfg: ExperimentConfig) -> str:
    return "mvn" if cfg.vector_mode == "mvn" else cfg.density_mode


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    id_train, id_test, ood = _dataset_specs(cfg)
    save_gmm_spec(id_mixture(id_train), paths["mixture"])
    for spec, path in ((id_train, paths["id_train"]),
                       (id_test, paths["id_test"]),
                       (ood, paths["ood_test"])):
        write_dataset(spec, path)
        print(f"wrote {spec.n} samples to {path}")
    return EXIT_OK


def cmd_select(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    samples = _load_samples(paths["id_train"])
    evaluator = _evaluator(cfg, paths)
    schedule = _schedule(cfg)
    n = len(cfg.candidates)
    gcfg = _gepc_config(cfg, cfg.candidates, (1.0 / n,) * n)
    feats = _feature_pass(evaluator, schedule, samples, gcfg, cfg.seed, threads)
    stat_feature = "s" if "s" in cfg.features else cfg.features[0]
    id_stats = {t: np.array([fm.values[(t, stat_feature)] for fm in feats])
                for t in cfg.candidates}
    sel = select_timesteps(id_stats, cfg.keep_k, cfg.weight_t)
    save_selection(sel, paths["selection"])
    print(f"kept timesteps {','.join(map(str, sel.kept))} -> {paths['selection']}")
    return EXIT_OK


def cmd_calibrate(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    if not os.path.exists(paths["selection"]):
        raise DataError(f"selection file not found: {paths['selection']} (run select)")
    sel = load_selection(paths["selection"])
    samples = _load_samples(paths["id_train"])
    evaluator = _evaluator(cfg, paths)
    schedule = _schedule(cfg)
    gcfg = _gepc_config(cfg, sel.kept, sel.weights)
    feats = _feature_pass(evaluator, schedule, samples, gcfg, cfg.seed, threads)
    cal = fit_calibrator(feats, _calibration_mode(cfg))
    save_calibrator(cal, paths["calibrator"])
    if cfg.baseline:
        bfeats = _baseline_features(evaluator, schedule, samples, gcfg,
                                    cfg.seed, threads)
        bcal = fit_calibrator(bfeats, _calibration_mode(cfg))
        save_calibrator(bcal, os.path.join(cfg.out_dir, "calibrator_baseline.txt"))
    print(f"fitted {cal.mode} calibrator -> {paths['calibrator']}")
    return EXIT_OK


def _score_split(cfg, paths, sel, cal, samples, evaluator, schedule, threads,
                 baseline_cal=None):
    gcfg = _gepc_config(cfg, sel.kept, sel.weights)
    feats = _feature_pass(evaluator, schedule, samples, gcfg, cfg.seed, threads)
    scores = [anomaly_score(fm, cal, sel, cfg.agg_feat, cfg.agg_t) for fm in feats]
    out = {"features": feats, "scores": scores}
    if baseline_cal is not None:
        bfeats = _baseline_features(evaluator, schedule, samples, gcfg,
                                    cfg.seed, threads)
        out["baseline_scores"] = [
            anomaly_score(fm, baseline_cal, sel, cfg.agg_feat, cfg.agg_t)
            for fm in bfeats
        ]
    return out


def cmd_score(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    for key in ("selection", "calibrator"):
        if not os.path.exists(paths[key]):
            raise DataError(f"{key} file not found: {paths[key]}")
    sel = load_selection(paths["selection"])
    cal = load_calibrator(paths["calibrator"])
    baseline_path = os.path.join(cfg.out_dir, "calibrator_baseline.txt")
    bcal = (load_calibrator(baseline_path)
            if cfg.baseline and os.path.exists(baseline_path) else None)
    evaluator = _evaluator(cfg, paths)
    schedule = _schedule(cfg)

    cells = tuple(sorted((t, f) for t in sel.kept for f in cfg.features))
    rows = []
    for split, csv_name in (("id_test", "scores_id.csv"),
                            ("ood_test", "scores_ood.csv")):
        samples = _load_samples(paths[split])
        res = _score_split(cfg, paths, sel, cal, samples, evaluator, schedule,
                           threads, baseline_cal=bcal)
        _write_scores_csv(os.path.join(cfg.out_dir, csv_name), samples,
                          res["features"], res["scores"], cells)
        rows.append(res)

    ledger = ComputeLedger.for_run(len(_group(cfg)), len(sel.kept), cfg.mc_samples)
    n_scored = sum(len(r["scores"]) for r in rows)
    with open(os.path.join(cfg.out_dir, "ledger.txt"), "w") as fh:
        fh.write(f"per_sample_forwards = {ledger.forwards}\n")
        fh.write(f"per_sample_jvps = {ledger.jvps}\n")
        fh.write(f"cost = {ledger.forwards}F+{ledger.jvps}J\n")
        fh.write(f"samples_scored = {n_scored}\n")

    mrows = [metrics_row("gepc", rows[0]["scores"], rows[1]["scores"])]
    if bcal is not None:
        mrows.append(metrics_row("score_norm_baseline",
                                 rows[0]["baseline_scores"],
                                 rows[1]["baseline_scores"]))
    write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), mrows)
    print(f"auroc = {mrows[0][3]:.6f} -> {os.path.join(cfg.out_dir, 'metrics.csv')}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    if not os.path.isdir(paths["id_train"]):
        cmd_gen(cfg, threads)
    for step in (cmd_select, cmd_calibrate, cmd_score):
        code = step(cfg, threads)
        if code != EXIT_OK:
            return code
    return EXIT_OK


def cmd_maps(cfg: ExperimentConfig, threads: int) -> int:
    paths = _paths(cfg)
    if not os.path.exists(paths["selection"]):
        raise DataError(f"selection file not found: {paths['selection']} (run select)")
    sel = load_selection(paths["selection"])
    evaluator = _evaluator(cfg, paths)
    schedule = _schedule(cfg)
    gcfg = _gepc_config(cfg, sel.kept, sel.weights)
    maps_dir = os.path.join(cfg.out_dir, "maps")
    os.makedirs(maps_dir, exist_ok=True)

    id_samples = _load_samples(paths["id_train"])[: cfg.maps_samples]
    id_maps = [residual_map(evaluator, schedule, sid, i, x0, gcfg, cfg.seed)
               for i, (sid, x0) in enumerate(id_samples)]
    v_global, degenerate = global_map_normalizer(id_maps)

    targets = [("id", id_samples, id_maps)]
    if os.path.isdir(paths["ood_test"]):
        ood_samples = _load_samples(paths["ood_test"])[: cfg.maps_samples]
        ood_maps = [residual_map(evaluator, schedule, sid, i, x0, gcfg, cfg.seed)
                    for i, (sid, x0) in enumerate(ood_samples)]
        targets.append(("ood", ood_samples, ood_maps))

    from .core import quantile

    for tag, samples, maps in targets:
        for (sid, _), m in zip(samples, maps):
            stem = os.path.join(maps_dir, f"{tag}_{sid}")
            write_gtf(Field(m.data[None]), stem + "_raw.gtf")
            write_pgm(m, quantile(m.data, 0.99), stem + "_local.pgm")
            write_pgm(m, v_global, stem + "_global.pgm")
    with open(os.path.join(maps_dir, "maps_meta.txt"), "w") as fh:
        fh.write(f"v_global = {v_global!r}\n")
        fh.write(f"degenerate = {int(degenerate)}\n")
    print(f"wrote maps for {sum(len(s) for _, s, _ in targets)} samples -> {maps_dir}")
    return EXIT_OK


def cmd_sanity(cfg: ExperimentConfig | None, threads: int,
               only: str | None) -> int:
    checks = run_checks(seed=0, only=only)
    if not checks:
        print(f"no sanity check matches --only {only!r}", file=sys.stderr)
        return EXIT_CONFIG
    print(render_report(checks))
    out_dir = cfg.out_dir if cfg is not None else "."
    os.makedirs(out_dir, exist_ok=True)
    write_sanity_csv(os.path.join(out_dir, "sanity.csv"), checks)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_SANITY
    return EXIT_OK


# ---------------------------------------------------------------------------
# Bridge-backed scoring (file protocol with an external denoiser adapter)


def _bridge_request(bridge_dir: str, request_id: str, fields: list[Field],
                    t_indices: list[int], sigmas: list[float],
                    timeout: float) -> list[Field]:
    """Write one stacked request, wait for the response, unstack it."""
    n = len(fields)
    c, h, w = fields[0].shape
    stacked = Field(np.concatenate([f.data for f in fields], axis=0))
    req_gtf = os.path.join(bridge_dir, f"request-{request_id}.gtf")
    req_meta = os.path.join(bridge_dir, f"request-{request_id}.meta")
    write_gtf(stacked, req_gtf + ".tmp")
    os.replace(req_gtf + ".tmp", req_gtf)
    lines = [f"n = {n}"]
    lines += [f"t_index = {t}" for t in t_indices]
    lines += [f"sigma_t = {s!r}" for s in sigmas]
    lines.append("want = score")
    with open(req_meta + ".tmp", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(req_meta + ".tmp", req_meta)

    resp = os.path.join(bridge_dir, f"response-{request_id}.gtf")
    err = os.path.join(bridge_dir, f"response-{request_id}.err")
    deadline = time.time() + timeout
    while True:
        if os.path.exists(err):
            with open(err) as fh:
                raise DataError(f"bridge error: {fh.read().strip()}")
        if os.path.exists(resp):
            break
        if time.time() > deadline:
            raise DataError(f"bridge response timed out after {timeout}s")
        time.sleep(0.05)
    from .tensor import read_gtf

    out = read_gtf(resp)
    if out.shape != (n * c, h, w):
        raise DataError(f"bridge response shape {out.shape} != {(n * c, h, w)}")
    return [Field(out.data[i * c:(i + 1) * c]) for i in range(n)]


def cmd_bridge_score(cfg: ExperimentConfig, threads: int) -> int:
    if not cfg.bridge_dir:
        raise ConfigError("bridge-score needs bridge.dir in the config")
    paths = _paths(cfg)
    if not os.path.exists(paths["selection"]):
        raise DataError(f"selection file not found: {paths['selection']} (run select)")
    sel = load_selection(paths["selection"])
    schedule = _schedule(cfg)
    G = _group(cfg)
    os.makedirs(cfg.bridge_dir, exist_ok=True)

    store = TabulatedScoreField()
    cells = tuple(sorted((t, f) for t in sel.kept for f in cfg.features))
    for split, csv_name in (("id_test", "scores_id_bridge.csv"),
                            ("ood_test", "scores_ood_bridge.csv")):
        if not os.path.isdir(paths[split]):
            continue
        samples = _load_samples(paths[split])
        fields, tis, sigmas, keys = [], [], [], []
        for i, (sid, x0) in enumerate(samples):
            for t in sel.kept:
                eps = Field(Stream(cfg.seed, 0xE5, i, 0).normal_field(x0.shape))
                x_t = forward_sample(schedule, x0, t, eps)
                for gi, g in enumerate(G):
                    fields.append(grp.apply(g, x_t))
                    tis.append(t)
                    sigmas.append(schedule.sigma(t))
                    keys.append((sid, gi, t))
        request_id = f"{split}-{len(fields):06d}"
        scores = _bridge_request(cfg.bridge_dir, request_id, fields, tis,
                                 sigmas, cfg.bridge_timeout)
        for key, s in zip(keys, scores):
            store.put(*key, s)
        evaluator = TabulatedEvaluator(store, G)
        gcfg = GepcConfig(group=G, timesteps=sel.kept, weights=sel.weights,
                          mc_samples=1, pool=cfg.pool, topk_k=cfg.topk_k,
                          features=cfg.features)
        rows = []
        for i, (sid, x0) in enumerate(samples):
            score, fm, _ = gepc_score(evaluator, schedule, sid, i, x0, gcfg,
                                      cfg.seed)
            rows.append((sid, score, fm))
        with open(os.path.join(cfg.out_dir, csv_name), "w") as fh:
            fh.write("sample_id,score," + ",".join(f"z_{t}_{f}" for t, f in cells)
                     + "\n")
            for sid, score, fm in rows:
                cols = ",".join(repr(fm.values[c]) for c in cells)
                fh.write(f"{sid},{score!r},{cols}\n")
        print(f"bridge-scored {len(samples)} samples -> {csv_name}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gepc",
        description="Group-equivariance residual OOD scoring for diffusion "
                    "score fields.")
    parser.add_argument("command",
                        choices=["gen", "select", "calibrate", "score", "run",
                                 "sanity", "maps", "bridge-score"])
    parser.add_argument("--config", help="experiment config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (default 1)")
    parser.add_argument("--only", help="sanity: run only matching checks")
    args = parser.parse_args(argv)

    try:
        cfg = None
        if args.config is not None:
            cfg = load_experiment_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
        if args.command == "sanity":
            return cmd_sanity(cfg, args.threads, args.only)
        if cfg is None:
            print("error: this command requires --config", file=sys.stderr)
            return EXIT_CONFIG
        handler = {
            "gen": cmd_gen,
            "select": cmd_select,
            "calibrate": cmd_calibrate,
            "score": cmd_score,
            "run": cmd_run,
            "maps": cmd_maps,
            "bridge-score": cmd_bridge_score,
        }[args.command]
        return handler(cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GtfError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InsufficientDataError, np.linalg.LinAlgError) as exc:
        print(f"numeric degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
