"""Stage functions behind the command line, usable directly from Python.

Each stage reads its declared inputs from the output directory and writes
its own files there under fixed names, so reruns with unchanged inputs
reproduce identical bytes.
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import data as D
from . import evaluation as E
from . import filtering as F
from . import model as M
from . import scoring as S
from . import training as T

log = logging.getLogger(__name__)

DATASET_DIR = "dataset"
INGEST_SUMMARY = "ingest_summary.json"
CANDIDATES = "candidates.tsv"
SCORED = "scored.tsv"
AUGMENT_SUMMARY = "augment_summary.json"
RECOVERY = "recovery.json"
WINDOW_GRID = (1, 3, 5, 10, 20)


class MissingStageError(RuntimeError):
    def __init__(self, stage: str, path):
        super().__init__(f"missing output of stage '{stage}': {path} (run `{stage}` first)")
        self.stage = stage


@dataclass
class RecoveryConfig:
    fraction: float = 0.2
    m: tuple = WINDOW_GRID
    L_r: tuple = WINDOW_GRID
    L_t: tuple = WINDOW_GRID


@dataclass
class PipelineConfig:
    dataset_path: str = ""
    dataset_format: str = "generic-tsv"
    split_seed: int = 0
    add_inverse: bool = True
    filter: F.FilterParams = field(default_factory=F.FilterParams)
    scoring: S.ScoringParams = field(default_factory=S.ScoringParams)
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    schedule: T.TrainSchedule = field(default_factory=T.TrainSchedule)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    literal_negative: bool = False
    filter_known: bool = True
    eval_split: str = "test"
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    output_dir: str = "out"

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # does not affect results
        d["recovery"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["recovery"].items()}
        return d


_SECTIONS = {
    "filter": F.FilterParams,
    "scoring": S.ScoringParams,
    "model": M.ModelConfig,
    "schedule": T.TrainSchedule,
    "recovery": RecoveryConfig,
}


def _build(cls, values: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return cls(**vals)


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw or {})
    kwargs = {}
    ds = raw.pop("dataset", {}) or {}
    for key, target in (("path", "dataset_path"), ("format", "dataset_format"),
                        ("split_seed", "split_seed"), ("add_inverse", "add_inverse")):
        if key in ds:
            kwargs[target] = ds.pop(key)
    if ds:
        raise ValueError(f"unknown keys in dataset: {sorted(ds)}")
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw.pop(name) or {}, name)
    top = {f.name for f in fields(PipelineConfig)} - set(_SECTIONS) - {"dataset_path", "dataset_format"}
    for key in list(raw):
        if key not in top:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = raw.pop(key)
    cfg = PipelineConfig(**kwargs)
    if cfg.dataset_format not in D.FORMATS:
        raise ValueError(f"unknown dataset format {cfg.dataset_format!r}")
    if cfg.eval_split not in ("valid", "test"):
        raise ValueError("eval_split must be 'valid' or 'test'")
    return cfg


def load_config(path=None, **overrides) -> PipelineConfig:
    """YAML config with ``None``-valued overrides ignored."""
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    cfg = config_from_dict(raw)
    model_seed = overrides.get("seed")
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if model_seed is not None:
        cfg = replace(cfg, model=replace(cfg.model, seed=model_seed))
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageError(stage, path)
    return path


def _prefix(augment: bool) -> str:
    return "" if augment else "baseline_"


def checkpoint_path(cfg: PipelineConfig, augment: bool = True) -> Path:
    return cfg.out / f"{_prefix(augment)}model.npz"


# ---------------------------------------------------------------------------
# stages


def run_ingest(cfg: PipelineConfig) -> dict:
    if not cfg.dataset_path:
        raise ValueError("no dataset path configured")
    d = D.load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.split_seed)
    if cfg.add_inverse and not d.inverse_added:
        d = D.add_inverse_relations(d)
    cfg.out.mkdir(parents=True, exist_ok=True)
    D.write_dataset(d, cfg.out / DATASET_DIR)
    summary = d.summary()
    _write_json(cfg.out / INGEST_SUMMARY, summary)
    return summary


def load_ingested(cfg: PipelineConfig) -> D.Dataset:
    root = _require(cfg.out / DATASET_DIR / "meta.json", "ingest").parent
    return D.load_dataset(root)


def augment_dataset(d: D.Dataset, cfg: PipelineConfig, idx: D.TkgIndex | None = None):
    """``(candidates, scored, summary)`` for the train split of ``d``."""
    idx = idx if idx is not None else D.build_indices(d, cfg.filter.L_r)
    t0 = time.perf_counter()
    cands = F.filter_all(idx, cfg.filter)
    t1 = time.perf_counter()
    if not cands:
        log.warning("no candidate negatives: every train fact was gated out or produced nothing")
        scored = []
    else:
        ts = S.triangle_scores(idx)
        scored = S.score_candidates(cands, idx, ts, cfg.scoring, seed=cfg.seed, threads=cfg.threads)
    t2 = time.perf_counter()
    summary = {
        "candidates": len(cands),
        "provenance": F.provenance_counts(cands),
        "classification": S.classification_counts(scored),
        "seconds": {"filter": round(t1 - t0, 3), "score": round(t2 - t1, 3)},
    }
    return cands, scored, summary


def run_augment(cfg: PipelineConfig) -> dict:
    d = load_ingested(cfg)
    cands, scored, summary = augment_dataset(d, cfg)
    F.write_candidates(cfg.out / CANDIDATES, cands)
    S.write_scored(cfg.out / SCORED, scored)
    # timings vary run to run; keep them out of the artifact
    _write_json(cfg.out / AUGMENT_SUMMARY, {k: v for k, v in summary.items() if k != "seconds"})
    return summary


def load_augmented(cfg: PipelineConfig) -> T.AugmentedSets:
    cands = F.read_candidates(_require(cfg.out / CANDIDATES, "augment"))
    rows = S.read_scored(_require(cfg.out / SCORED, "augment"))
    if len(rows) != len(cands):
        raise ValueError(f"{SCORED} and {CANDIDATES} disagree in length")
    scored = []
    for c, (q, _, mean, src, cls, label) in zip(cands, rows):
        if tuple(q) != tuple(c.candidate):
            raise ValueError(f"{SCORED} and {CANDIDATES} list different candidates")
        scored.append(S.ScoredCandidate(c, np.zeros(0), mean, src, cls, label))
    return T.build_augmented_sets(cands, scored)


def train_model(d: D.Dataset, cfg: PipelineConfig, aug: T.AugmentedSets | None, augment: bool = True,
                idx: D.TkgIndex | None = None, callback=None):
    idx = idx if idx is not None else D.build_indices(d, cfg.filter.L_r)
    return T.run_two_stage(d, idx, aug, cfg.model, cfg.schedule, seed=cfg.seed, augment=augment,
                           literal_negative=cfg.literal_negative, callback=callback)


def run_train(cfg: PipelineConfig, augment: bool = True) -> Path:
    d = load_ingested(cfg)
    aug = load_augmented(cfg) if augment else None
    log_path = cfg.out / f"{_prefix(augment)}train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def write(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("%s", rec)

        state, records = train_model(d, cfg, aug, augment, callback=write)
    best = [r for r in records if "valid_mrr" in r]
    extra = {"augment": augment, "seed": cfg.seed}
    if best:
        extra["best_valid_mrr"] = max(r["valid_mrr"] for r in best)
    path = checkpoint_path(cfg, augment)
    M.save_checkpoint(path, state, cfg.model, extra)
    return path


def run_eval(cfg: PipelineConfig, checkpoint=None, augment: bool = True) -> E.EvalReport:
    d = load_ingested(cfg)
    path = Path(checkpoint) if checkpoint else checkpoint_path(cfg, augment)
    state, _, _ = M.load_checkpoint(_require(path, "train"))
    facts = d.split(cfg.eval_split)
    idx = D.build_indices(d, cfg.filter.L_r)
    known = D.known_objects(d.train, d.valid, d.test)
    report = E.evaluate(state, facts, idx, known, filter_known=cfg.filter_known)
    pre = _prefix(augment) if not checkpoint else ""
    (cfg.out / f"{pre}eval_report.json").write_text(report.to_json(), encoding="utf-8")
    report.write_ranks(cfg.out / f"{pre}ranks.tsv")
    return report


# ---------------------------------------------------------------------------
# recovery


def holdout_split(d: D.Dataset, fraction: float, seed: int):
    """Hold out raw train facts; inverse copies of held-out facts go too.

    Returns ``(retained train facts, removed raw facts)``.
    """
    train = d.train
    if d.inverse_added:
        train = train[train[:, 1] < d.n_raw_relations]
    retained, removed = D.split_holdout(replace(d, train=train), fraction, seed)
    kept = retained.train
    if d.inverse_added:
        inv = kept[:, [2, 1, 0, 3]].copy()
        inv[:, 1] += d.n_raw_relations
        kept = np.concatenate([kept, inv])
    return kept, removed


def recovery_sweep(d: D.Dataset, rc: RecoveryConfig, k_sparse: int = 1, seed: int = 0) -> dict:
    """Recovery rate for every ``(m, L_r, L_t)`` in the grid; sparsity gating off."""
    kept, removed = holdout_split(d, rc.fraction, seed)
    runs = []
    for L_r in sorted(set(rc.L_r)):
        idx = D.build_index(kept, d.n_entities, d.n_relations, d.n_timestamps, L_r)
        for m, L_t in itertools.product(sorted(set(rc.m)), sorted(set(rc.L_t))):
            p = F.FilterParams(m=m, L_r=L_r, L_t=L_t, k_sparse=k_sparse)
            t0 = time.perf_counter()
            rate = F.recovery_rate(idx, removed, p, gate_sparse=False)
            runs.append({"m": m, "L_r": L_r, "L_t": L_t, "rate": rate,
                         "seconds": round(time.perf_counter() - t0, 3)})
    best = max(runs, key=lambda r: (r["rate"], -r["m"], -r["L_r"], -r["L_t"]))
    return {"fraction": rc.fraction, "removed": int(len(removed)), "retained": int(len(kept)),
            "best": best, "runs": runs}


def run_recovery(cfg: PipelineConfig) -> dict:
    d = load_ingested(cfg)
    result = recovery_sweep(d, cfg.recovery, cfg.filter.k_sparse, cfg.seed)
    stable = dict(result)
    stable["best"] = {k: v for k, v in result["best"].items() if k != "seconds"}
    stable["runs"] = [{k: v for k, v in r.items() if k != "seconds"} for r in result["runs"]]
    _write_json(cfg.out / RECOVERY, stable)
    return result
