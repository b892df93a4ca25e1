"""Reference completion scorer: a real-valued 4-way factorisation.

``score(s, r, o, t) = sum_i E[s]_i * R[r]_i * E[o]_i * T[t]_i``

Anything exposing ``init_model``/``score_objects``/``quad_gradients`` with the
same shapes can stand in for it in training and evaluation.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

TABLES = ("entity", "relation", "time")
CHECKPOINT_VERSION = 1
EPS = 1e-10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 200
    lr: float = 0.001
    reg_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")


@dataclass
class ModelState:
    entity: np.ndarray
    relation: np.ndarray
    time: np.ndarray
    accum: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in TABLES:
            self.accum.setdefault(name, np.zeros_like(getattr(self, name)))

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.entity), len(self.relation), len(self.time)

    def copy(self) -> "ModelState":
        return ModelState(self.entity.copy(), self.relation.copy(), self.time.copy(),
                          {k: v.copy() for k, v in self.accum.items()})


def init_model(cfg: ModelConfig, sizes, rng: np.random.Generator | None = None) -> ModelState:
    n_e, n_r, n_t = sizes
    if min(n_e, n_r, n_t) < 1:
        raise ValueError(f"all table sizes must be positive, got {tuple(sizes)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    bound = 0.5 / np.sqrt(cfg.dim)
    tables = [rng.uniform(-bound, bound, size=(n, cfg.dim)) for n in (n_e, n_r, n_t)]
    return ModelState(*tables)


def _check_ids(state: ModelState, s, r, o, t):
    n_e, n_r, n_t = state.sizes
    for name, ids, n in (("entity", s, n_e), ("relation", r, n_r), ("entity", o, n_e), ("time", t, n_t)):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{name} id out of range [0, {n})")


def score(state: ModelState, q) -> float:
    s, r, o, t = q
    _check_ids(state, s, r, o, t)
    return float(np.sum(state.entity[s] * state.relation[r] * state.entity[o] * state.time[t]))


def score_quads(state: ModelState, quads) -> np.ndarray:
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    s, r, o, t = quads.T
    _check_ids(state, s, r, o, t)
    return np.einsum("nd,nd->n", state.entity[s] * state.relation[r] * state.time[t], state.entity[o])


def score_objects(state: ModelState, s, r, t, objects) -> np.ndarray:
    objects = np.asarray(objects, dtype=np.int64)
    _check_ids(state, s, r, objects, t)
    query = state.entity[s] * state.relation[r] * state.time[t]
    return state.entity[objects] @ query


def score_all_objects(state: ModelState, queries) -> np.ndarray:
    """``(n, |E|)`` scores for queries given as rows ``(s, r, t)``."""
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    _check_ids(state, q[:, 0], q[:, 1], q[:, 0], q[:, 2])
    query = state.entity[q[:, 0]] * state.relation[q[:, 1]] * state.time[q[:, 2]]
    return query @ state.entity.T


def _scatter(ids: np.ndarray, weights: np.ndarray, cols: np.ndarray, values: np.ndarray):
    """Sum ``weights[n] * values[cols[n]]`` into the distinct rows of ``ids``."""
    rows, inv = np.unique(ids, return_inverse=True)
    acc = sp.csr_matrix((weights, (inv.ravel(), cols)), shape=(len(rows), len(values)))
    return rows, np.asarray(acc @ values)


def _sparse_rows(ids: np.ndarray, values: np.ndarray):
    ids = np.asarray(ids).ravel()
    return _scatter(ids, np.ones(len(ids)), np.arange(len(ids)), values)


def query_gradients(state: ModelState, queries, objects, dscore) -> dict:
    """Row gradients of ``sum_{b,k} dscore[b,k] * score(s_b, r_b, objects[b,k], t_b)``.

    Entries with ``objects < 0`` are skipped. Shares the query product over a
    row's candidates instead of expanding every candidate to a quadruple.
    """
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    objects = np.asarray(objects, dtype=np.int64).reshape(len(q), -1)
    dscore = np.where(objects >= 0, np.asarray(dscore, dtype=np.float64).reshape(objects.shape), 0.0)
    s, r, t = q.T
    es, rr, tt = state.entity[s], state.relation[r], state.time[t]
    query = es * rr * tt
    b, k = np.nonzero(objects >= 0)
    obj = objects[b, k]
    gq = np.asarray(sp.csr_matrix((dscore[b, k], (b, obj)), shape=(len(q), len(state.entity)))
                    @ state.entity)
    ent_ids, ent_vals = _scatter(obj, dscore[b, k], b, query)
    g_s = gq * rr * tt
    return {
        "entity": _sparse_rows(np.concatenate([ent_ids, s]), np.concatenate([ent_vals, g_s])),
        "relation": _sparse_rows(r, gq * es * tt),
        "time": _sparse_rows(t, gq * es * rr),
    }


def quad_gradients(state: ModelState, quads, dscore) -> dict:
    """Row gradients of ``sum_n dscore[n] * score(quads[n])``.

    Returns ``{table: (row ids, gradient rows)}``.
    """
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    g = np.asarray(dscore, dtype=np.float64)[:, None]
    s, r, o, t = quads.T
    es, rr, eo, tt = state.entity[s], state.relation[r], state.entity[o], state.time[t]
    ent_ids = np.concatenate([s, o])
    ent_vals = np.concatenate([g * rr * eo * tt, g * es * rr * tt])
    return {
        "entity": _sparse_rows(ent_ids, ent_vals),
        "relation": _sparse_rows(r, g * es * eo * tt),
        "time": _sparse_rows(t, g * es * rr * eo),
    }


def l2_penalty(state: ModelState, quads, weight: float):
    """``weight * sum of squared norms`` of the distinct rows ``quads`` touch."""
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if weight == 0 or len(quads) == 0:
        return 0.0, {}
    rows = {
        "entity": np.unique(np.concatenate([quads[:, 0], quads[:, 2]])),
        "relation": np.unique(quads[:, 1]),
        "time": np.unique(quads[:, 3]),
    }
    value, grads = 0.0, {}
    for name, ids in rows.items():
        w = getattr(state, name)[ids]
        value += weight * float(np.sum(w * w))
        grads[name] = (ids, 2.0 * weight * w)
    return value, grads


def merge_gradients(*parts) -> dict:
    out: dict = {}
    for part in parts:
        for name, (ids, vals) in part.items():
            if name in out:
                ids0, vals0 = out[name]
                out[name] = _sparse_rows(np.concatenate([ids0, ids]), np.concatenate([vals0, vals]))
            else:
                out[name] = (ids, vals)
    return out


def apply_gradients(state: ModelState, grads: dict, cfg: ModelConfig) -> ModelState:
    """Adagrad step on the touched rows only. Updates ``state`` in place."""
    for name, (ids, g) in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} table")
    for name, (ids, g) in grads.items():
        acc = state.accum[name]
        acc[ids] += g * g
        getattr(state, name)[ids] -= cfg.lr * g / (np.sqrt(acc[ids]) + EPS)
    return state


def save_checkpoint(path, state: ModelState, cfg: ModelConfig, extra: dict | None = None) -> None:
    """``.npz`` holding the three tables, optimiser sums and a JSON header."""
    header = {"format_version": CHECKPOINT_VERSION, "model": "tensor4", "config": asdict(cfg)}
    if extra:
        header["extra"] = extra
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    arrays.update({name: getattr(state, name) for name in TABLES})
    arrays.update({f"accum_{name}": state.accum[name] for name in TABLES})
    # fixed entry timestamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        state = ModelState(z["entity"].copy(), z["relation"].copy(), z["time"].copy(),
                           {name: z[f"accum_{name}"].copy() for name in TABLES})
    return state, ModelConfig(**header["config"]), header
