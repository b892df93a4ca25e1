"""Frequency-based filtering of potential false negatives.

Three generators derive unobserved quadruples from each observed fact:

* relation: swap the relation for one that co-occurs with it on the same
  entity pair and that the subject commonly uses;
* entity: swap the object for a frequent neighbour of the subject that has
  been the object of the same relation;
* time: fill the omitted timestamps between two close repetitions of a fact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Quadruple, TkgIndex

RELATION, ENTITY, TIME = "relation", "entity", "time"
PROVENANCES = (RELATION, ENTITY, TIME)


@dataclass(frozen=True)
class FilterParams:
    m: int = 10
    L_r: int = 3
    L_t: int = 3
    k_sparse: int = 10

    def __post_init__(self):
        for name in ("m", "L_r", "L_t", "k_sparse"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


class CandidateNegative(NamedTuple):
    candidate: Quadruple
    source: Quadruple
    provenance: str


def top_m(freq: dict, m: int) -> frozenset:
    """Keys with the ``m`` highest counts; ties go to the smaller id."""
    if m < 1:
        raise ValueError("m must be >= 1")
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(k for k, _ in ranked[:m])


class _TopCache:
    """Memoised top-m sets for one index and one m."""

    def __init__(self, idx: TkgIndex, m: int):
        self.idx, self.m = idx, m
        self._cache: dict = {}

    def get(self, table: str, key: int) -> frozenset:
        ck = (table, key)
        hit = self._cache.get(ck)
        if hit is None:
            hit = top_m(getattr(self.idx, table).get(key, {}), self.m)
            self._cache[ck] = hit
        return hit


def _cache_for(idx, p, cache):
    return cache if cache is not None else _TopCache(idx, p.m)


def relation_filter(f, idx: TkgIndex, p: FilterParams, cache=None) -> set:
    s, r, o, t = f
    top = _cache_for(idx, p, cache)
    out = set()
    for r2 in top.get("relation_cooccur", r) & top.get("relations_as_subject", s):
        q = Quadruple(s, r2, o, t)
        if q not in idx.fact_set:
            out.add(CandidateNegative(q, Quadruple(*f), RELATION))
    return out


def entity_filter(f, idx: TkgIndex, p: FilterParams, cache=None) -> set:
    s, r, o, t = f
    top = _cache_for(idx, p, cache)
    out = set()
    for o2 in top.get("entity_neighbors", s):
        if r not in top.get("relations_as_object", o2):
            continue
        q = Quadruple(s, r, o2, t)
        if q not in idx.fact_set:
            out.add(CandidateNegative(q, Quadruple(*f), ENTITY))
    return out


def time_filter(f, idx: TkgIndex, p: FilterParams, cache=None) -> set:
    s, r, o, t = f
    times = idx.timelines.get((s, r, o))
    if times is None:
        return set()
    pos = int(np.searchsorted(times, t)) - 1
    if pos < 0:
        return set()
    x = int(times[pos])
    if not 0 < t - x < p.L_t:
        return set()
    src = Quadruple(*f)
    out = set()
    for t2 in range(x + 1, t):
        q = Quadruple(s, r, o, t2)
        if q not in idx.fact_set:
            out.add(CandidateNegative(q, src, TIME))
    return out


_FILTERS = ((RELATION, relation_filter), (ENTITY, entity_filter), (TIME, time_filter))


def is_sparse(f, idx: TkgIndex, k_sparse: int) -> bool:
    return idx.degree(f[0]) <= k_sparse or idx.degree(f[2]) <= k_sparse


def filter_all(idx: TkgIndex, p: FilterParams, gate_sparse: bool = True) -> list:
    """Union of the three filters over the (sparse) train facts of ``idx``.

    Sources are visited in ``(s, r, o, t)`` order and filters in the order
    relation, entity, time; a candidate keeps the first source that produced
    it. The result is sorted by candidate quadruple.
    """
    if p.L_r != idx.L_r:
        raise ValueError(f"index was built with L_r={idx.L_r}, params ask for L_r={p.L_r}")
    cache = _TopCache(idx, p.m)
    found: dict = {}
    for f in idx.facts.tolist():
        if gate_sparse and not is_sparse(f, idx, p.k_sparse):
            continue
        for _, fn in _FILTERS:
            for c in sorted(fn(f, idx, p, cache)):
                found.setdefault(c.candidate, c)
    return [found[k] for k in sorted(found)]


def candidate_quads(cands) -> np.ndarray:
    return np.asarray([c.candidate for c in cands], dtype=np.int64).reshape(-1, 4)


def exclusions_by_source(cands) -> dict:
    """``source fact -> candidate quadruples`` derived from it."""
    out: dict = {}
    for c in cands:
        out.setdefault(c.source, set()).add(c.candidate)
    return out


def recovery_rate(retained_idx: TkgIndex, removed, p: FilterParams, gate_sparse: bool = False) -> float:
    """Fraction of ``removed`` facts regenerated as candidates from the retained graph."""
    removed = np.asarray(removed, dtype=np.int64).reshape(-1, 4)
    if len(removed) == 0:
        raise ValueError("no removed facts to recover")
    found = {c.candidate for c in filter_all(retained_idx, p, gate_sparse=gate_sparse)}
    hits = sum(tuple(q) in found for q in removed.tolist())
    return hits / len(removed)


def provenance_counts(cands) -> dict:
    counts = {k: 0 for k in PROVENANCES}
    for c in cands:
        counts[c.provenance] += 1
    return counts


def write_candidates(path, cands) -> None:
    """TSV: s r o t provenance source_s source_r source_o source_t."""
    with open(path, "w", encoding="utf-8") as fh:
        for c in cands:
            fh.write("\t".join(map(str, (*c.candidate, c.provenance, *c.source))) + "\n")


def read_candidates(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 9:
                continue
            q = Quadruple(*map(int, cols[:4]))
            src = Quadruple(*map(int, cols[5:9]))
            out.append(CandidateNegative(q, src, cols[4]))
    return out
