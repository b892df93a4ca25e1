"""Temporal knowledge graph datasets: ingestion, canonical files, indices.

Facts are stored as ``(n, 4)`` int64 arrays with columns ``s, r, o, t``.
Single facts travel as :class:`Quadruple` (a plain tuple, so it hashes and
compares like ``(s, r, o, t)``).
"""
from __future__ import annotations

import datetime as _dt
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

FORMATS = ("icews-tsv", "yago-tsv", "wikidata-tsv", "generic-tsv")
SPLITS = ("train", "valid", "test")
INVERSE_SUFFIX = "_inv"


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent dataset input."""


class ParseError(DatasetError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class EmptyDatasetError(DatasetError):
    pass


class Quadruple(NamedTuple):
    s: int
    r: int
    o: int
    t: int


class Vocab:
    """Bidirectional token <-> id map.

    Ids are normally dense and assigned in first-seen order; the time vocab
    may be sparse because its ids are offsets on a calendar axis.
    """

    def __init__(self, pairs: Iterable[tuple[str, int]] = ()):
        self.token_to_id: dict[str, int] = {}
        self.id_to_token: dict[int, str] = {}
        for tok, idx in pairs:
            self.token_to_id[tok] = idx
            self.id_to_token[idx] = tok

    def add(self, token: str) -> int:
        idx = self.token_to_id.get(token)
        if idx is None:
            idx = len(self.token_to_id)
            self.token_to_id[token] = idx
            self.id_to_token[idx] = token
        return idx

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    def __getitem__(self, token):
        return self.token_to_id[token]

    @property
    def size(self) -> int:
        """Length of the id axis (max id + 1)."""
        return max(self.id_to_token) + 1 if self.id_to_token else 0

    def items(self):
        return sorted(self.token_to_id.items(), key=lambda kv: kv[1])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.token_to_id == other.token_to_id


def _as_facts(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 4), dtype=np.int64)
    return arr.reshape(-1, 4)


@dataclass
class Dataset:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entities: Vocab
    relations: Vocab
    timestamps: Vocab
    granularity: str = "day"
    inverse_added: bool = False
    n_raw_relations: int = 0
    name: str = ""

    def __post_init__(self):
        self.train = _as_facts(self.train)
        self.valid = _as_facts(self.valid)
        self.test = _as_facts(self.test)
        if not self.n_raw_relations:
            self.n_raw_relations = len(self.relations)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_timestamps(self) -> int:
        return self.timestamps.size

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.n_entities, self.n_relations, self.n_timestamps

    def split(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def all_facts(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def summary(self) -> dict:
        """Table-1-style counts; relations before inverse augmentation."""
        return {
            "entities": self.n_entities,
            "relations": self.n_raw_relations,
            "timestamps": self.n_timestamps,
            "facts": int(sum(len(self.split(s)) for s in SPLITS)),
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
            "inverse_added": self.inverse_added,
        }


# ---------------------------------------------------------------------------
# loading


def _find_split_files(root: Path) -> dict[str, Path]:
    found = {}
    for split in SPLITS:
        for name in (split, f"{split}.txt", f"{split}.tsv"):
            p = root / name
            if p.is_file():
                found[split] = p
                break
    return found


def _read_rows(path: Path, min_cols: int, max_cols: int):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) == 1:
                cols = line.split()
            if not (min_cols <= len(cols) <= max_cols):
                raise ParseError(path, lineno, f"expected {min_cols}-{max_cols} columns, got {len(cols)}")
            rows.append((lineno, [c.strip() for c in cols]))
    return rows


def _parse_day(token: str) -> int | None:
    try:
        return _dt.date.fromisoformat(token).toordinal()
    except ValueError:
        return None


def _parse_year(token: str) -> int | None:
    head = token.strip().lstrip("-")[:4]
    if len(head) < 4 or not head.isdigit():
        return None
    return int(head)


def _time_value(fmt: str, cols: list[str], path, lineno) -> tuple[str, int]:
    """Return (token, absolute time value) for one row."""
    if fmt in ("yago-tsv", "wikidata-tsv"):
        # interval facts collapse to their start year; end year as fallback
        for tok in cols[3:]:
            year = _parse_year(tok)
            if year is not None:
                return str(year), year
        raise ParseError(path, lineno, f"no usable year in {cols[3:]!r}")
    tok = cols[3]
    if tok.lstrip("-").isdigit():
        return tok, int(tok)
    if fmt == "icews-tsv":
        day = _parse_day(tok)
        if day is not None:
            return tok, day
    raise ParseError(path, lineno, f"unparseable timestamp {tok!r}")


def load_dataset(path, format: str = "generic-tsv", split_seed: int = 0) -> Dataset:
    """Read a temporal KG from ``path`` (a directory of split files or one file).

    Entity and relation ids are assigned in first-seen order over
    train, valid, test. Time ids are offsets from the earliest timestamp in
    the dataset's granularity (days for ICEWS, years for YAGO/Wikidata);
    generic integer timestamps are kept as given.

    A directory holding canonical output of :func:`write_dataset` is read
    back with its stored ids and vocabularies.

    A single file (or a directory with only a train file) is shuffled with
    ``split_seed`` and split 8:1:1.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {FORMATS}")
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"dataset path does not exist: {root}")
    if root.is_dir() and (root / "meta.json").is_file():
        return _load_canonical(root)

    if root.is_dir():
        files = _find_split_files(root)
        if "train" not in files:
            raise DatasetError(f"no train file in {root}")
    else:
        files = {"train": root}

    max_cols = 5 if format in ("yago-tsv", "wikidata-tsv") else 4
    ents, rels = Vocab(), Vocab()
    raw: dict[str, list[tuple[int, int, int, str, int]]] = {}
    for split in SPLITS:
        if split not in files:
            continue
        parsed = []
        for lineno, cols in _read_rows(files[split], 4, max_cols):
            tok, value = _time_value(format, cols, files[split], lineno)
            s = ents.add(cols[0])
            r = rels.add(cols[1])
            o = ents.add(cols[2])
            parsed.append((s, r, o, tok, value))
        raw[split] = parsed

    if not any(raw.values()):
        raise EmptyDatasetError(f"no facts found under {root}")

    granularity = {"icews-tsv": "day", "generic-tsv": "step"}.get(format, "year")
    all_values = [row[4] for rows in raw.values() for row in rows]
    # integer timestamps are already indices; calendar values get offset
    base = min(all_values) if format != "generic-tsv" else 0
    times = Vocab()
    splits = {}
    for split, rows in raw.items():
        out = []
        for s, r, o, tok, value in rows:
            t = value - base
            if t < 0:
                raise DatasetError(f"negative timestamp {tok!r} in {split}")
            times.token_to_id.setdefault(tok, t)
            times.id_to_token.setdefault(t, tok)
            out.append((s, r, o, t))
        splits[split] = _as_facts(out)

    if set(raw) == {"train"}:
        train, valid, test = random_split(splits["train"], seed=split_seed)
    else:
        empty = _as_facts([])
        train = splits.get("train", empty)
        valid = splits.get("valid", empty)
        test = splits.get("test", empty)
    return Dataset(train, valid, test, ents, rels, times,
                   granularity=granularity, name=root.name)


def random_split(facts: np.ndarray, ratios=(8, 1, 1), seed: int = 0):
    """Deduplicate then split ``facts`` at random in the given proportions."""
    facts = np.unique(_as_facts(facts), axis=0)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(facts))
    total = sum(ratios)
    n_train = len(facts) * ratios[0] // total
    n_valid = len(facts) * ratios[1] // total
    parts = np.split(order, [n_train, n_train + n_valid])
    return tuple(facts[np.sort(p)] for p in parts)


def _read_vocab(path: Path) -> Vocab:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((tok, int(idx)))
    return Vocab(pairs)


def _load_canonical(root: Path) -> Dataset:
    meta = json.loads((root / "meta.json").read_text())
    splits = {}
    for split in SPLITS:
        rows = []
        p = root / f"{split}.tsv"
        if p.is_file():
            for lineno, cols in _read_rows(p, 4, 4):
                try:
                    rows.append([int(c) for c in cols])
                except ValueError:
                    raise ParseError(p, lineno, "canonical files hold integer ids") from None
        splits[split] = _as_facts(rows)
    return Dataset(
        splits["train"], splits["valid"], splits["test"],
        _read_vocab(root / "entities.tsv"),
        _read_vocab(root / "relations.tsv"),
        _read_vocab(root / "timestamps.tsv"),
        granularity=meta["granularity"],
        inverse_added=meta["inverse_added"],
        n_raw_relations=meta["n_raw_relations"],
        name=meta.get("name", root.name),
    )


def write_dataset(d: Dataset, out_dir) -> Path:
    """Write canonical generic-tsv splits (integer ids) plus vocab files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_facts(out / f"{split}.tsv", d.split(split))
    for name, vocab in (("entities", d.entities), ("relations", d.relations),
                        ("timestamps", d.timestamps)):
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for tok, idx in vocab.items():
                fh.write(f"{tok}\t{idx}\n")
    meta = {
        "format_version": 1,
        "name": d.name,
        "granularity": d.granularity,
        "inverse_added": d.inverse_added,
        "n_raw_relations": d.n_raw_relations,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def write_facts(path, facts, extra_columns=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, (s, r, o, t) in enumerate(np.asarray(facts).reshape(-1, 4).tolist()):
            tail = "" if extra_columns is None else "\t" + "\t".join(map(str, extra_columns[i]))
            fh.write(f"{s}\t{r}\t{o}\t{t}{tail}\n")


# ---------------------------------------------------------------------------
# preprocessing


def add_inverse_relations(d: Dataset) -> Dataset:
    """Add ``(o, r + |R|, s, t)`` for every fact in every split."""
    if d.inverse_added:
        raise DatasetError("inverse relations were already added to this dataset")
    n_rel = d.n_relations
    rels = Vocab(d.relations.items())
    for tok, idx in d.relations.items():
        rels.token_to_id[tok + INVERSE_SUFFIX] = idx + n_rel
        rels.id_to_token[idx + n_rel] = tok + INVERSE_SUFFIX

    def both(facts):
        inv = facts[:, [2, 1, 0, 3]].copy()
        inv[:, 1] += n_rel
        return np.concatenate([facts, inv])

    return replace(d, train=both(d.train), valid=both(d.valid), test=both(d.test),
                   relations=rels, inverse_added=True, n_raw_relations=n_rel)


def split_holdout(d: Dataset, fraction: float, seed: int):
    """Remove ``floor(fraction * |train|)`` random train facts.

    Returns ``(retained_dataset, removed_facts)``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(d.train)
    n_remove = int(np.floor(fraction * n))
    rng = np.random.default_rng(seed)
    removed_idx = np.sort(rng.choice(n, size=n_remove, replace=False))
    mask = np.ones(n, dtype=bool)
    mask[removed_idx] = False
    return replace(d, train=d.train[mask]), d.train[removed_idx]


def restrict_to_entities(d: Dataset, keep) -> Dataset:
    """Subgraph induced by the entity ids in ``keep``; ids are re-densified."""
    keep = np.asarray(sorted(set(int(e) for e in keep)), dtype=np.int64)
    remap = -np.ones(d.n_entities, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    ents = Vocab((d.entities.id_to_token[int(e)], i) for i, e in enumerate(keep))

    def sub(facts):
        m = (remap[facts[:, 0]] >= 0) & (remap[facts[:, 2]] >= 0)
        out = facts[m].copy()
        out[:, 0] = remap[out[:, 0]]
        out[:, 2] = remap[out[:, 2]]
        return out

    return replace(d, train=sub(d.train), valid=sub(d.valid), test=sub(d.test), entities=ents)


def top_degree_entities(d: Dataset, n: int) -> np.ndarray:
    """Ids of the ``n`` entities appearing in the most facts (ties by id)."""
    facts = d.all_facts()
    deg = np.bincount(np.concatenate([facts[:, 0], facts[:, 2]]), minlength=d.n_entities)
    order = np.lexsort((np.arange(d.n_entities), -deg))
    return np.sort(order[:n])


# ---------------------------------------------------------------------------
# indices


@dataclass(frozen=True)
class TkgIndex:
    """Read-only lookup structures over the train facts.

    Frequency tables map ``key -> {member: count}``:

    * ``entity_neighbors[e]``: objects ``e`` points to, counted per fact.
    * ``relations_as_subject[e]`` / ``relations_as_object[e]``: relation use
      by role, counted per fact.
    * ``relation_cooccur[r]``: relations ``r_i != r`` seen on the same ordered
      ``(s, o)`` pair within ``L_r`` time units, counted per witnessing fact
      pair.

    ``pair_multiplicity[(a, b)]`` (``a < b``) is the number of distinct
    ``(a, r, b)`` and ``(b, r, a)`` triples in the time-irrelevant graph.
    ``adjacency[a][b]`` holds ``(relations, times)`` of every train fact
    between ``a`` and ``b`` in either direction, sorted by time.
    """

    facts: np.ndarray
    n_entities: int
    n_relations: int
    n_timestamps: int
    L_r: int
    fact_set: frozenset
    entity_neighbors: dict
    relations_as_subject: dict
    relations_as_object: dict
    relation_cooccur: dict
    timelines: dict
    triples: frozenset
    pair_multiplicity: dict
    adjacency: dict
    entity_times: dict
    known_objects: dict = field(repr=False)

    def __contains__(self, quad) -> bool:
        return tuple(quad) in self.fact_set

    def degree(self, e: int) -> int:
        """``|N(e)|``: number of distinct entities ``e`` points to."""
        return len(self.entity_neighbors.get(e, ()))

    def neighbor_count(self, a: int, b: int) -> int:
        return self.pair_multiplicity.get((a, b) if a < b else (b, a), 0)


def _nested_counter(keys: np.ndarray, members: np.ndarray, weights=None) -> dict:
    out: dict[int, dict[int, int]] = defaultdict(dict)
    if len(keys) == 0:
        return {}
    pairs = np.stack([keys, members], axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    counts = np.bincount(inverse.ravel(), weights=weights, minlength=len(uniq))
    for (k, m), c in zip(uniq.tolist(), counts.tolist()):
        out[k][m] = int(c)
    return dict(out)


def _cooccurrence(facts: np.ndarray, L_r: int) -> dict:
    if len(facts) == 0:
        return {}
    order = np.lexsort((facts[:, 3], facts[:, 2], facts[:, 0]))
    f = facts[order]
    group = f[:, 0] * (f[:, 2].max() + 1) + f[:, 2]
    t, r = f[:, 3], f[:, 1]
    src, dst = [], []
    k = 1
    while k < len(f):
        same = (group[k:] == group[:-k]) & (t[k:] - t[:-k] < L_r)
        if not same.any():
            break  # rows sorted by (pair, t): wider offsets only drift further
        i = np.nonzero(same)[0]
        a, b = r[i], r[i + k]
        keep = a != b
        src.extend([a[keep], b[keep]])
        dst.extend([b[keep], a[keep]])
        k += 1
    if not src:
        return {}
    return _nested_counter(np.concatenate(src), np.concatenate(dst))


def build_index(facts, n_entities: int, n_relations: int, n_timestamps: int, L_r: int = 3) -> TkgIndex:
    if L_r < 1:
        raise ValueError("L_r must be >= 1")
    facts = _as_facts(facts)
    facts = facts[np.lexsort((facts[:, 3], facts[:, 2], facts[:, 1], facts[:, 0]))]
    rows = [tuple(x) for x in facts.tolist()]
    s, r, o, t = facts.T

    timelines: dict = defaultdict(list)
    known: dict = defaultdict(set)
    for fs, fr, fo, ft in rows:
        timelines[(fs, fr, fo)].append(ft)
        known[(fs, fr, ft)].add(fo)
    timelines = {k: np.unique(v) for k, v in timelines.items()}
    triples = frozenset(timelines)

    mult: Counter = Counter()
    for a, _, b in triples:
        if a != b:
            mult[(a, b) if a < b else (b, a)] += 1

    adj: dict = defaultdict(lambda: defaultdict(list))
    ent_times: dict = defaultdict(set)
    for fs, fr, fo, ft in rows:
        ent_times[fs].add(ft)
        ent_times[fo].add(ft)
        if fs == fo:
            continue
        adj[fs][fo].append((ft, fr))
        adj[fo][fs].append((ft, fr))
    adjacency = {}
    for a, nbrs in adj.items():
        inner = {}
        for b, items in nbrs.items():
            items.sort()
            arr = np.asarray(items, dtype=np.int64)
            inner[b] = (arr[:, 1].copy(), arr[:, 0].copy())
        adjacency[a] = inner

    return TkgIndex(
        facts=facts,
        n_entities=n_entities,
        n_relations=n_relations,
        n_timestamps=n_timestamps,
        L_r=L_r,
        fact_set=frozenset(rows),
        entity_neighbors=_nested_counter(s, o),
        relations_as_subject=_nested_counter(s, r),
        relations_as_object=_nested_counter(o, r),
        relation_cooccur=_cooccurrence(facts, L_r),
        timelines=timelines,
        triples=triples,
        pair_multiplicity=dict(mult),
        adjacency=adjacency,
        entity_times={e: np.array(sorted(v), dtype=np.int64) for e, v in ent_times.items()},
        known_objects={k: frozenset(v) for k, v in known.items()},
    )


def build_indices(d: Dataset, L_r: int = 3) -> TkgIndex:
    """Index the train split of ``d`` (never valid/test)."""
    return build_index(d.train, d.n_entities, d.n_relations, d.n_timestamps, L_r)


def known_objects(*fact_arrays) -> dict:
    """Map ``(s, r, t) -> set of o`` over the given fact arrays."""
    out = defaultdict(set)
    for facts in fact_arrays:
        for s, r, o, t in _as_facts(facts).tolist():
            out[(s, r, t)].add(o)
    return dict(out)


def env_path(name: str, default=None):
    value = os.environ.get(name)
    return Path(value) if value else default
