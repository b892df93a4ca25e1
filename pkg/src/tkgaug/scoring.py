"""Hierarchical triadic-closure scoring of candidate facts.

Global part: entity-triangle and relation-triangle counts on the
time-irrelevant graph, min-max normalised into intensities in ``(0, 1]``.
Local part: for a fact ``(s, r, o, t)`` the bridge entities ``e`` linked to
both ``s`` and ``o`` near ``t`` (entity layer), and per bridge the pairs of
relations ``(s-e, e-o)`` (relation layer). Relation intensities are averaged
over a bridge with recency weights, then bridges are summed with an
entity-intensity boost.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import Quadruple, TkgIndex

FALSE_NEGATIVE, HARD_NEGATIVE = "false-negative", "hard-negative"


def _normalise(counts, c_min, c_max):
    """(C - min + 1) / (max - min + 1), floored at 0 for absent patterns."""
    counts = np.asarray(counts, dtype=np.float64)
    return np.maximum((counts - c_min + 1.0) / (c_max - c_min + 1.0), 0.0)


# ---------------------------------------------------------------------------
# entity triangles


def _pair_matrix(idx: TkgIndex) -> sp.csr_matrix:
    n = idx.n_entities
    if not idx.pair_multiplicity:
        return sp.csr_matrix((n, n), dtype=np.int64)
    ab = np.asarray(list(idx.pair_multiplicity), dtype=np.int64)
    w = np.asarray(list(idx.pair_multiplicity.values()), dtype=np.int64)
    rows = np.concatenate([ab[:, 0], ab[:, 1]])
    cols = np.concatenate([ab[:, 1], ab[:, 0]])
    return sp.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def _has_triangle(adj: sp.csr_matrix) -> bool:
    return (adj @ adj).multiply(adj).nnz > 0


@dataclass
class EntityTriangles:
    """``C_e(a, b, c) = min`` of the three pair multiplicities.

    Counts are read straight off the pair-multiplicity table; only the
    normalisation bounds are precomputed.
    """

    pair_multiplicity: dict
    c_min: int
    c_max: int

    @property
    def empty(self) -> bool:
        return self.c_max == 0

    def count(self, a, b, c) -> int:
        if len({a, b, c}) < 3:
            return 0
        pm = self.pair_multiplicity
        return min(pm.get((min(a, b), max(a, b)), 0),
                   pm.get((min(b, c), max(b, c)), 0),
                   pm.get((min(a, c), max(a, c)), 0))

    def score(self, a, b, c) -> float:
        if self.empty:
            return 0.0
        return float(_normalise(self.count(a, b, c), self.c_min, self.c_max))

    def table(self) -> dict:
        """Every triangle ``(a < b < c) -> C_e`` (enumerates; small graphs)."""
        nbrs: dict = {}
        for a, b in self.pair_multiplicity:
            nbrs.setdefault(a, set()).add(b)
            nbrs.setdefault(b, set()).add(a)
        out = {}
        for a, b in sorted(self.pair_multiplicity):
            for c in sorted(nbrs[a] & nbrs[b]):
                if c > b:
                    out[(a, b, c)] = self.count(a, b, c)
        return out


def entity_triangle_scores(idx: TkgIndex) -> EntityTriangles:
    w = _pair_matrix(idx)
    adj = (w > 0).astype(np.int64)
    in_tri = (adj @ adj).multiply(adj).tocoo()
    if in_tri.nnz == 0:
        return EntityTriangles(idx.pair_multiplicity, 0, 0)
    weights = np.asarray(w[in_tri.row, in_tri.col]).ravel()
    levels = np.unique(weights)
    # largest level k such that edges with weight >= k still close a triangle
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _has_triangle((w >= levels[mid]).astype(np.int64)):
            lo = mid
        else:
            hi = mid - 1
    return EntityTriangles(idx.pair_multiplicity, int(levels[0]), int(levels[lo]))


# ---------------------------------------------------------------------------
# relation triangles


@dataclass
class RelationTriangles:
    """Counts ``C_r(r1, r2, r3)`` stored as sorted flat keys.

    Slot order follows the template ``(i, r1, j), (j, r2, k), (i, r3, k)``.
    """

    n_relations: int
    keys: np.ndarray
    counts: np.ndarray
    c_min: int
    c_max: int

    @property
    def empty(self) -> bool:
        return len(self.keys) == 0

    def _key(self, r1, r2, r3):
        R = self.n_relations
        return (np.asarray(r1, dtype=np.int64) * R + np.asarray(r2, dtype=np.int64)) * R + np.asarray(r3, dtype=np.int64)

    def count(self, r1, r2, r3):
        key = self._key(r1, r2, r3)
        if self.empty:
            return np.zeros_like(key)
        pos = np.clip(np.searchsorted(self.keys, key), 0, len(self.keys) - 1)
        return np.where(self.keys[pos] == key, self.counts[pos], 0)

    def score(self, r1, r2, r3):
        if self.empty:
            return np.zeros(np.broadcast(np.asarray(r1), np.asarray(r2), np.asarray(r3)).shape)
        return _normalise(self.count(r1, r2, r3), self.c_min, self.c_max)

    def table(self) -> dict:
        R = self.n_relations
        out = {}
        for key, c in zip(self.keys.tolist(), self.counts.tolist()):
            out[(key // (R * R), (key // R) % R, key % R)] = c
        return out


def relation_triangle_scores(idx: TkgIndex, chunk: int = 2_000_000) -> RelationTriangles:
    """Count relation triangles with sparse wedge products.

    Wedges ``(i, r1, j), (j, r2, k)`` are counted per ``((i, r1), (k, r2))``
    by one sparse product, then joined with the closing edges ``(i, r3, k)``.
    Self-loops never sit in a triangle of three distinct entities and are
    dropped first, which also keeps ``i``, ``j``, ``k`` distinct.
    """
    n, R = idx.n_entities, idx.n_relations
    trip = np.asarray(sorted(idx.triples), dtype=np.int64).reshape(-1, 3)
    trip = trip[trip[:, 0] != trip[:, 2]]
    empty = RelationTriangles(R, np.zeros(0, np.int64), np.zeros(0, np.int64), 0, 0)
    if len(trip) == 0:
        return empty
    a, r, b = trip.T
    ones = np.ones(len(trip), dtype=np.int64)
    # X[(i, r1), j] and Y[j, (k, r2)]
    X = sp.csr_matrix((ones, (a * R + r, b)), shape=(n * R, n))
    Y = sp.csr_matrix((ones, (a, b * R + r)), shape=(n, n * R))

    closing_key = a * n + b  # trip is sorted by (a, r, b); re-sort by pair
    order = np.argsort(closing_key, kind="stable")
    closing_key, closing_rel = closing_key[order], r[order]
    uniq_pairs, first, n_close = np.unique(closing_key, return_index=True, return_counts=True)

    acc_keys, acc_counts = [], []
    # chunk rows of X so each wedge product holds about ``chunk`` entries
    est = X @ np.diff(Y.indptr).astype(np.int64)
    cum = np.cumsum(est)
    bounds = np.searchsorted(cum, np.arange(chunk, cum[-1] + chunk, chunk), side="right") if cum[-1] else []
    bounds = np.unique(np.concatenate([[0], np.asarray(bounds, dtype=np.int64), [n * R]]))
    bounds = np.clip(bounds, 0, n * R)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        P = (X[lo:hi] @ Y).tocoo()
        if P.nnz == 0:
            continue
        prow = P.row.astype(np.int64) + lo
        i, r1 = prow // R, prow % R
        k, r2 = P.col.astype(np.int64) // R, P.col.astype(np.int64) % R
        pair = i * n + k
        pos = np.searchsorted(uniq_pairs, pair)
        pos = np.clip(pos, 0, len(uniq_pairs) - 1)
        hit = uniq_pairs[pos] == pair
        if not hit.any():
            continue
        pos, r1, r2, c = pos[hit], r1[hit], r2[hit], P.data[hit].astype(np.int64)
        reps = n_close[pos]
        r3 = closing_rel[np.repeat(first[pos], reps) + _ranges(reps)]
        key = (np.repeat(r1, reps) * R + np.repeat(r2, reps)) * R + r3
        uk, inv = np.unique(key, return_inverse=True)
        acc_keys.append(uk)
        acc_counts.append(np.bincount(inv.ravel(), weights=np.repeat(c, reps)).astype(np.int64))
    if not acc_keys:
        return empty
    keys = np.concatenate(acc_keys)
    uk, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv.ravel(), weights=np.concatenate(acc_counts)).astype(np.int64)
    return RelationTriangles(R, uk, counts, int(counts.min()), int(counts.max()))


def _ranges(lengths: np.ndarray) -> np.ndarray:
    """Concatenated ``arange(l)`` for each ``l`` in ``lengths``."""
    if len(lengths) == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(lengths)
    return np.arange(ends[-1]) - np.repeat(ends - lengths, lengths)


@dataclass
class TriangleScores:
    entity: EntityTriangles
    relation: RelationTriangles


def triangle_scores(idx: TkgIndex) -> TriangleScores:
    return TriangleScores(entity_triangle_scores(idx), relation_triangle_scores(idx))


# ---------------------------------------------------------------------------
# local structure


@dataclass
class LocalStructure:
    """Entity layer ``bridges`` and a flattened relation layer.

    Bridge ``bridges[b]`` owns ``counts[b]`` consecutive items of
    ``r_i, t_i, r_j, t_j``: a fact ``s - e`` with relation ``r_i`` at ``t_i``
    paired with a fact ``e - o`` with relation ``r_j`` at ``t_j``.
    """

    s: int
    o: int
    t: int
    bridges: np.ndarray
    counts: np.ndarray
    r_i: np.ndarray
    t_i: np.ndarray
    r_j: np.ndarray
    t_j: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.r_i)

    def layer(self, e: int) -> list:
        """Items ``(r_i, t_i, r_j, t_j)`` of bridge ``e``."""
        where = np.nonzero(self.bridges == e)[0]
        if len(where) == 0:
            return []
        b = int(where[0])
        lo = int(self.counts[:b].sum())
        hi = lo + int(self.counts[b])
        return list(zip(self.r_i[lo:hi].tolist(), self.t_i[lo:hi].tolist(),
                        self.r_j[lo:hi].tolist(), self.t_j[lo:hi].tolist()))


def _window(rels, times, t, L_e):
    lo = np.searchsorted(times, t - L_e, side="left")
    hi = np.searchsorted(times, t + L_e, side="right")
    return rels[lo:hi], times[lo:hi]


def build_local_structure(f, idx: TkgIndex, L_e: int) -> LocalStructure:
    s, _, o, t = f
    nb_s = idx.adjacency.get(s, {})
    nb_o = idx.adjacency.get(o, {})
    if len(nb_o) < len(nb_s):
        common = [e for e in nb_o if e in nb_s]
    else:
        common = [e for e in nb_s if e in nb_o]
    bridges, counts, parts = [], [], []
    for e in sorted(common):
        if e == s or e == o:
            continue
        ri, ti = _window(*nb_s[e], t, L_e)
        if len(ri) == 0:
            continue
        rj, tj = _window(*nb_o[e], t, L_e)
        if len(rj) == 0:
            continue
        n_i, n_j = len(ri), len(rj)
        parts.append((np.repeat(ri, n_j), np.repeat(ti, n_j), np.tile(rj, n_i), np.tile(tj, n_i)))
        bridges.append(e)
        counts.append(n_i * n_j)
    if parts:
        ri, ti, rj, tj = (np.concatenate(x) for x in zip(*parts))
    else:
        ri = rj = np.zeros(0, dtype=np.int64)
        ti = tj = np.zeros(0, dtype=np.int64)
    return LocalStructure(s, o, t, np.asarray(bridges, dtype=np.int64),
                          np.asarray(counts, dtype=np.int64), ri,
                          ti.astype(np.float64), rj, tj.astype(np.float64))


def recency_weights(t_i, t_j) -> np.ndarray:
    """Softmax of ``-|t_i - t_j|`` over one relation layer."""
    gap = -np.abs(np.asarray(t_i, dtype=np.float64) - np.asarray(t_j, dtype=np.float64))
    if gap.size == 0:
        return gap
    w = np.exp(gap - gap.max())
    return w / w.sum()


def aggregate_score(f, ls: LocalStructure, ts: TriangleScores) -> float:
    """Confidence of ``f`` from its local structure; 0 when there is none."""
    keep = ls.counts > 0
    if not keep.any():
        return 0.0
    bridges, counts = ls.bridges[keep], ls.counts[keep]
    r = f[1]
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    gap = -np.abs(ls.t_i - ls.t_j)
    seg = np.repeat(np.arange(len(counts)), counts)
    w = np.exp(gap - np.maximum.reduceat(gap, offsets)[seg])
    sr = ts.relation.score(ls.r_i, ls.r_j, r)
    m_e = np.add.reduceat(w * sr, offsets) / np.add.reduceat(w, offsets)
    boost = np.array([1.0 + ts.entity.score(ls.s, ls.o, int(e)) for e in bridges])
    return float(np.dot(m_e, boost))


def perturb(ls: LocalStructure, rng: np.random.Generator, p_drop: float, p_dup: float,
            time_noise: float) -> LocalStructure:
    """Drop or duplicate relation-layer items and jitter their timestamps."""
    n = ls.n_items
    u = rng.random(n)
    reps = np.where(u < p_drop, 0, np.where(u < p_drop + p_dup, 2, 1))
    seg = np.repeat(np.arange(len(ls.counts)), ls.counts)
    counts = np.bincount(seg, weights=reps, minlength=len(ls.counts)).astype(np.int64)
    t_i = np.repeat(ls.t_i, reps)
    t_j = np.repeat(ls.t_j, reps)
    if time_noise > 0:
        t_i = t_i + rng.uniform(-time_noise, time_noise, len(t_i))
        t_j = t_j + rng.uniform(-time_noise, time_noise, len(t_j))
    return LocalStructure(ls.s, ls.o, ls.t, ls.bridges, counts,
                          np.repeat(ls.r_i, reps), t_i, np.repeat(ls.r_j, reps), t_j)


@dataclass(frozen=True)
class ScoringParams:
    L_e: int = 3
    n_perturb: int = 5
    p_drop: float = 0.1
    p_dup: float = 0.1
    time_noise: float = 1.0
    # score the source fact by its perturbed mean instead of its plain score
    perturb_source: bool = False

    def __post_init__(self):
        if self.n_perturb < 1:
            raise ValueError("n_perturb must be >= 1")
        if self.L_e < 0:
            raise ValueError("L_e must be >= 0")
        if not (0 <= self.p_drop and 0 <= self.p_dup and self.p_drop + self.p_dup <= 1):
            raise ValueError("need p_drop, p_dup >= 0 and p_drop + p_dup <= 1")


@dataclass
class ScoredCandidate:
    candidate: object  # CandidateNegative
    perturbed_scores: np.ndarray
    mean_score: float
    source_score: float
    classification: str
    smooth_label: float | None = field(default=None)

    @property
    def is_false_negative(self) -> bool:
        return self.classification == FALSE_NEGATIVE


def _rng_for(seed: int, quad, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, salt, *map(int, quad)]))


def _perturbed_scores(f, ls, ts, params, rng) -> np.ndarray:
    return np.array([
        aggregate_score(f, perturb(ls, rng, params.p_drop, params.p_dup, params.time_noise), ts)
        for _ in range(params.n_perturb)
    ])


def source_score(f, idx, ts, params: ScoringParams, seed: int = 0) -> float:
    ls = build_local_structure(f, idx, params.L_e)
    if params.perturb_source:
        return float(_perturbed_scores(f, ls, ts, params, _rng_for(seed, f, 1)).mean())
    return aggregate_score(f, ls, ts)


def perturb_and_classify(c, idx: TkgIndex, ts: TriangleScores, params: ScoringParams,
                         seed: int = 0, source_cache: dict | None = None) -> ScoredCandidate:
    """Score candidate ``c`` under perturbation and label it.

    It is a false negative when the mean perturbed score beats its source
    fact's score; the mean then becomes its smooth label.
    """
    if params.n_perturb < 1:
        raise ValueError("n_perturb must be >= 1")
    src = tuple(c.source)
    if source_cache is not None and src in source_cache:
        m_src = source_cache[src]
    else:
        m_src = source_score(src, idx, ts, params, seed)
        if source_cache is not None:
            source_cache[src] = m_src
    q = tuple(c.candidate)
    ls = build_local_structure(q, idx, params.L_e)
    scores = _perturbed_scores(q, ls, ts, params, _rng_for(seed, q))
    mean = float(scores.mean())
    if mean > m_src:
        return ScoredCandidate(c, scores, mean, m_src, FALSE_NEGATIVE, mean)
    return ScoredCandidate(c, scores, mean, m_src, HARD_NEGATIVE, None)


def score_candidates(cands, idx: TkgIndex, ts: TriangleScores, params: ScoringParams,
                     seed: int = 0, threads: int = 1) -> list:
    """Classify every candidate; output order matches input order."""
    cands = list(cands)
    src_scores = {}
    for c in cands:
        src = tuple(c.source)
        if src not in src_scores:
            src_scores[src] = source_score(src, idx, ts, params, seed)

    def one(c):
        return perturb_and_classify(c, idx, ts, params, seed, source_cache=src_scores)

    if threads <= 1 or len(cands) < 64:
        return [one(c) for c in cands]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, cands, chunksize=64))


def classification_counts(scored) -> dict:
    out = {FALSE_NEGATIVE: 0, HARD_NEGATIVE: 0}
    for sc in scored:
        out[sc.classification] += 1
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scored(path, scored) -> None:
    """TSV: s r o t provenance mean source classification smooth_label."""
    with open(path, "w", encoding="utf-8") as fh:
        for sc in scored:
            c = sc.candidate
            label = "" if sc.smooth_label is None else _fmt(sc.smooth_label)
            fh.write("\t".join([*map(str, c.candidate), c.provenance, _fmt(sc.mean_score),
                                _fmt(sc.source_score), sc.classification, label]) + "\n")


def read_scored(path) -> list:
    """Rows ``(quad, provenance, mean, source, classification, label)``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 9:
                continue
            label = float(cols[8]) if cols[8] else None
            rows.append((Quadruple(*map(int, cols[:4])), cols[4], float(cols[5]),
                         float(cols[6]), cols[7], label))
    return rows

