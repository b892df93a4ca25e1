"""Ranking metrics and imbalance diagnostics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import TkgIndex

HITS_AT = (1, 3, 10)
DEGREE_BINS = ((0, 10), (10, 50), (50, 100), (100, None))


def _stratum(deg: int) -> str:
    for lo, hi in DEGREE_BINS:
        if hi is None or deg < hi:
            return f"[{lo},{'inf' if hi is None else hi})"
    raise AssertionError


def _ranks_from_scores(scores: np.ndarray, true_obj: np.ndarray) -> np.ndarray:
    true = scores[np.arange(len(scores)), true_obj]
    # ties with other candidates count against the true object
    return (scores >= true[:, None]).sum(axis=1).astype(np.int64)


def filtered_ranks(state: M.ModelState, facts, known: dict | None = None, chunk: int = 512) -> np.ndarray:
    """Rank of each fact's object; ``known`` maps ``(s, r, t)`` to objects to skip."""
    facts = np.asarray(facts, dtype=np.int64).reshape(-1, 4)
    out = np.empty(len(facts), dtype=np.int64)
    for lo in range(0, len(facts), chunk):
        batch = facts[lo:lo + chunk]
        scores = M.score_all_objects(state, batch[:, [0, 1, 3]])
        if known:
            rows, cols = [], []
            for i, (s, r, o, t) in enumerate(batch.tolist()):
                others = [c for c in known.get((s, r, t), ()) if c != o]
                rows.extend([i] * len(others))
                cols.extend(others)
            if rows:
                scores[rows, cols] = -np.inf
        out[lo:lo + chunk] = _ranks_from_scores(scores, batch[:, 2])
    return out


def rank(state: M.ModelState, f, filter_known: bool = True, known: dict | None = None) -> int:
    """``1 + #{candidates scoring >= the true object}`` (pessimistic ties)."""
    return int(filtered_ranks(state, [f], known if filter_known else None)[0])


@dataclass
class EvalReport:
    mrr: float
    hits: dict
    per_timestamp: dict
    per_timestamp_std: float
    degree_strata: dict
    ranks: np.ndarray = field(repr=False)
    facts: np.ndarray = field(repr=False)
    filtered: bool = True

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "per_timestamp": {str(t): {"mrr": m, "count": c} for t, (m, c) in self.per_timestamp.items()},
            "per_timestamp_std": self.per_timestamp_std,
            "degree_strata": self.degree_strata,
            "n_facts": int(len(self.ranks)),
            "filtered": self.filtered,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_ranks(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (s, r, o, t), k in zip(self.facts.tolist(), self.ranks.tolist()):
                fh.write(f"{s}\t{r}\t{o}\t{t}\t{k}\n")


def report_from_ranks(facts, ranks, idx: TkgIndex | None = None, filtered: bool = True) -> EvalReport:
    facts = np.asarray(facts, dtype=np.int64).reshape(-1, 4)
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        raise ValueError("cannot evaluate an empty fact list")
    rr = 1.0 / ranks
    hits = {k: float(np.mean(ranks <= k)) for k in HITS_AT}
    per_t = {}
    for t in np.unique(facts[:, 3]).tolist():
        sel = facts[:, 3] == t
        per_t[int(t)] = (float(rr[sel].mean()), int(sel.sum()))
    std = float(np.std([m for m, _ in per_t.values()]))
    strata = {}
    if idx is not None:
        labels = np.array([_stratum(idx.degree(s)) for s in facts[:, 0].tolist()])
        for lo, hi in DEGREE_BINS:
            lab = _stratum(lo)
            sel = labels == lab
            if sel.any():
                strata[lab] = float(rr[sel].mean())
    return EvalReport(float(rr.mean()), hits, per_t, std, strata, ranks, facts, filtered)


def evaluate(state: M.ModelState, facts, idx: TkgIndex | None = None, known: dict | None = None,
             filter_known: bool = True) -> EvalReport:
    """MRR, Hits@{1,3,10}, per-timestamp MRR and degree strata over ``facts``.

    With ``filter_known`` other true objects listed in ``known`` (normally
    train + valid + test) are skipped when ranking.
    """
    facts = np.asarray(facts, dtype=np.int64).reshape(-1, 4)
    if len(facts) == 0:
        raise ValueError("cannot evaluate an empty fact list")
    ranks = filtered_ranks(state, facts, known if filter_known else None)
    return report_from_ranks(facts, ranks, idx, filtered=filter_known)


@dataclass
class RankFluctuation:
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    std: np.ndarray

    @property
    def range(self) -> np.ndarray:
        return self.max - self.min

    @property
    def mean_range(self) -> float:
        return float(self.range.mean())


def rank_fluctuation(reports) -> RankFluctuation:
    """Per-fact spread of ranks across runs over the same facts."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("need at least two runs")
    base = reports[0].facts
    for rep in reports[1:]:
        if rep.facts.shape != base.shape or not np.array_equal(rep.facts, base):
            raise ValueError("runs were evaluated on different facts")
    ranks = np.stack([rep.ranks for rep in reports]).astype(np.float64)
    return RankFluctuation(ranks.mean(axis=0), ranks.min(axis=0), ranks.max(axis=0), ranks.std(axis=0))


@dataclass
class PreferenceProfile:
    """Averages over the top-ranked entities of each query.

    ``time_span`` uses ``t + 1`` for entities with no activity at or before
    ``t``; ``inactive`` counts how often that happened.
    """

    entity_frequency: float
    time_span: float
    relation_frequency: float
    inactive: int = 0


def preference_profile(state: M.ModelState, queries, idx: TkgIndex, top_n: int = 10) -> PreferenceProfile:
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    scores = M.score_all_objects(state, queries)
    n_e = scores.shape[1]
    ids = np.arange(n_e)
    ee, span, er = [], [], []
    inactive = 0
    for (s, r, t), row in zip(queries.tolist(), scores):
        top = np.lexsort((ids, -row))[:top_n]
        for e in top.tolist():
            ee.append(sum(idx.entity_neighbors.get(e, {}).values()))
            er.append(idx.relations_as_subject.get(e, {}).get(r, 0)
                      + idx.relations_as_object.get(e, {}).get(r, 0))
            times = idx.entity_times.get(e)
            pos = -1 if times is None else int(np.searchsorted(times, t, side="right")) - 1
            if pos < 0:
                span.append(t + 1)
                inactive += 1
            else:
                span.append(t - int(times[pos]))
    return PreferenceProfile(float(np.mean(ee)), float(np.mean(span)), float(np.mean(er)), inactive)
