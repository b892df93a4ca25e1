"""Synthetic event graphs with heavy-tailed activity and missing facts.

Pairs of entities are linked by preferential attachment with some triadic
closure; each pair uses a few relations from one relation family, and each
(s, r, o) recurs in short bursts of consecutive timestamps. A fraction of the
resulting true facts is hidden at random, so the observed graph has genuine
false negatives with known ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Vocab, random_split


@dataclass(frozen=True)
class SyntheticSpec:
    n_entities: int = 500
    n_relations: int = 20
    n_timestamps: int = 100
    n_pairs: int = 3000
    n_families: int = 4
    zipf_exponent: float = 1.0
    closure: float = 0.3
    rels_per_pair: float = 1.5
    episodes_per_triple: float = 1.5
    burst_length: float = 3.0
    hidden_fraction: float = 0.2


@dataclass
class SyntheticTkg:
    dataset: Dataset
    true_facts: np.ndarray
    hidden_facts: np.ndarray


def _vocab(prefix: str, n: int) -> Vocab:
    return Vocab((f"{prefix}{i}", i) for i in range(n))


def generate(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> SyntheticTkg:
    rng = np.random.default_rng(seed)
    n_e, n_r, n_t = spec.n_entities, spec.n_relations, spec.n_timestamps
    weights = 1.0 / np.arange(1, n_e + 1) ** spec.zipf_exponent
    weights = rng.permutation(weights / weights.sum())
    families = np.array_split(rng.permutation(n_r), min(spec.n_families, n_r))
    fam_weights = [1.0 / np.arange(1, len(f) + 1) for f in families]

    neighbors: list[list[int]] = [[] for _ in range(n_e)]
    pairs: set = set()
    attempts = 0
    while len(pairs) < spec.n_pairs and attempts < 20 * spec.n_pairs:
        attempts += 1
        a = int(rng.choice(n_e, p=weights))
        if neighbors[a] and rng.random() < spec.closure:
            b = neighbors[a][rng.integers(len(neighbors[a]))]
            if not neighbors[b]:
                continue
            c = neighbors[b][rng.integers(len(neighbors[b]))]
        else:
            c = int(rng.choice(n_e, p=weights))
        if c == a or (a, c) in pairs:
            continue
        pairs.add((a, c))
        neighbors[a].append(c)
        neighbors[c].append(a)

    facts = set()
    for a, c in sorted(pairs):
        fam = int(rng.integers(len(families)))
        members, w = families[fam], fam_weights[fam]
        k = min(len(members), 1 + rng.poisson(spec.rels_per_pair - 1))
        rels = rng.choice(members, size=k, replace=False, p=w / w.sum())
        for r in rels.tolist():
            for _ in range(1 + rng.poisson(spec.episodes_per_triple - 1)):
                start = int(rng.integers(n_t))
                length = int(rng.geometric(1.0 / spec.burst_length))
                for t in range(start, min(n_t, start + length)):
                    facts.add((a, r, c, t))

    true = np.array(sorted(facts), dtype=np.int64).reshape(-1, 4)
    hide = rng.random(len(true)) < spec.hidden_fraction
    observed, hidden = true[~hide], true[hide]
    train, valid, test = random_split(observed, seed=int(rng.integers(2**31)))
    times = Vocab((str(t), t) for t in range(n_t))
    d = Dataset(train, valid, test, _vocab("e", n_e), _vocab("r", n_r), times,
                granularity="step", name=f"synthetic-{seed}")
    return SyntheticTkg(d, true, hidden)
