import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkgaug import model as M
from tkgaug import training as T
import oracles as O


def small_state(seed=0, sizes=(6, 3, 4), dim=5, scale=1.0):
    rng = np.random.default_rng(seed)
    st_ = M.init_model(M.ModelConfig(dim=dim), sizes, rng)
    for name in M.TABLES:
        getattr(st_, name)[:] = rng.normal(scale=scale, size=getattr(st_, name).shape)
    return st_


def dense(grads, state):
    out = {name: np.zeros_like(getattr(state, name)) for name in M.TABLES}
    for name, (ids, g) in grads.items():
        out[name][ids] += g
    return [out[name] for name in M.TABLES]


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_init_and_validation():
    st_ = M.init_model(M.ModelConfig(dim=8), (5, 2, 3), np.random.default_rng(0))
    assert st_.entity.shape == (5, 8) and st_.relation.shape == (2, 8) and st_.time.shape == (3, 8)
    assert np.abs(st_.entity).max() <= 0.5 / math.sqrt(8)
    with pytest.raises(ValueError):
        M.ModelConfig(dim=0)
    with pytest.raises(ValueError):
        M.init_model(M.ModelConfig(), (0, 1, 1))
    with pytest.raises(IndexError):
        M.score(st_, (5, 0, 0, 0))


def test_score_matches_loop():
    st_ = small_state()
    for q in [(0, 1, 2, 3), (5, 0, 5, 0), (1, 2, 4, 2)]:
        want = O.tensor_score(st_.entity.tolist(), st_.relation.tolist(), st_.time.tolist(), *q)
        assert M.score(st_, q) == pytest.approx(want, rel=1e-12)
    allq = M.score_all_objects(st_, [(1, 2, 2)])
    assert allq[0] == pytest.approx(M.score_objects(st_, 1, 2, 2, np.arange(6)))


def test_quad_gradients_fd():
    st_ = small_state(1)
    quads = [(0, 1, 2, 3), (2, 0, 2, 1), (0, 1, 5, 3)]
    w = np.array([0.7, -1.3, 2.0])
    an = dense(M.quad_gradients(st_, quads, w), st_)
    fd = O.numeric_grad(lambda: float(w @ M.score_quads(st_, quads)), [st_.entity, st_.relation, st_.time])
    for a, n in zip(an, fd):
        assert rel_err(a, n) < 1e-4


def test_query_gradients_match_quad_gradients():
    st_ = small_state(2)
    q = np.array([[0, 1, 2], [3, 0, 1]])
    objs = np.array([[1, 4, -1], [3, 3, 0]])
    w = np.array([[0.5, -1.0, 9.0], [2.0, 1.0, -0.5]])
    b, k = np.nonzero(objs >= 0)
    quads = np.stack([q[b, 0], q[b, 1], objs[b, k], q[b, 2]], axis=1)
    for a, c in zip(dense(M.query_gradients(st_, q, objs, w), st_), dense(M.quad_gradients(st_, quads, w[b, k]), st_)):
        assert np.allclose(a, c, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.floats(0, 0.5))
def test_pretrain_gradients_fd(seed, dim, reg):
    st_ = small_state(seed, dim=dim)
    rng = np.random.default_rng(seed)
    batch = np.array([[0, 1, 2, 3], [4, 2, 1, 0], [0, 1, 5, 3]])
    negs = T.sample_negative_objects(batch, 6, 3, rng)
    negs[0, -1] = -1  # padding is skipped
    loss, grads = T.pretrain_loss_and_grads(st_, batch, negs, reg)
    fd = O.numeric_grad(lambda: T.pretrain_loss_and_grads(st_, batch, negs, reg)[0],
                        [st_.entity, st_.relation, st_.time])
    for a, n in zip(dense(grads, st_), fd):
        assert rel_err(a, n) < 1e-4
    direct = sum(O.softmax_loss(st_, f, [f[2]] + [e for e in row if e >= 0]) for f, row in zip(batch.tolist(), negs.tolist()))
    assert loss - (M.l2_penalty(st_, _touched(batch, negs), reg)[0]) == pytest.approx(direct, rel=1e-10)


def _touched(batch, negs):
    rows = [(s, r, o, t) for s, r, o, t in batch.tolist()]
    for (s, r, _, t), row in zip(batch.tolist(), negs.tolist()):
        rows += [(s, r, e, t) for e in row if e >= 0]
    return rows


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.booleans(), st.floats(0, 0.5))
def test_finetune_gradients_fd(seed, dim, literal, reg):
    st_ = small_state(seed, dim=dim)
    quads = np.array([[0, 1, 2, 3], [4, 2, 1, 0], [0, 1, 5, 3], [3, 0, 3, 2]])
    labels = np.array([0.4, 1.0, 0.0, 0.0])
    positive = np.array([True, True, False, False])
    _, grads = T.finetune_loss_and_grads(st_, quads, labels, positive, reg, literal)
    fd = O.numeric_grad(lambda: T.finetune_loss_and_grads(st_, quads, labels, positive, reg, literal)[0],
                        [st_.entity, st_.relation, st_.time])
    for a, n in zip(dense(grads, st_), fd):
        assert rel_err(a, n) < 1e-4


def scalar_state(entity, n_t=1):
    e = np.asarray(entity, dtype=float).reshape(-1, 1)
    return M.ModelState(e, np.ones((1, 1)), np.ones((n_t, 1)))


def test_pretrain_loss_examples():
    st_ = scalar_state([1.0, 0.0])
    loss, _ = T.pretrain_loss_and_grads(st_, [(0, 0, 0, 0)], [[1]])
    assert loss == pytest.approx(math.log(1 + math.exp(-1)))
    assert loss == pytest.approx(0.3133, abs=1e-4)
    flat = scalar_state(np.ones(51))
    negs = list(range(2, 51))
    assert len(negs) == 49
    loss, _ = T.pretrain_loss_and_grads(flat, [(0, 0, 1, 0)], [negs])
    assert loss == pytest.approx(math.log(50))
    big = scalar_state([30.0, 0.0])
    loss, _ = T.pretrain_loss_and_grads(big, [(0, 0, 0, 0)], [[1]])
    assert 0 <= loss < 1e-12


def test_finetune_loss_examples():
    st_ = scalar_state([0.0, 1.0])
    q = [(0, 0, 1, 0)]  # score 0
    assert T.finetune_loss_and_grads(st_, q, [1.0], [True])[0] == pytest.approx(math.log(2))
    assert T.finetune_loss_and_grads(st_, q, [0.5], [True])[0] == pytest.approx(0.5 * math.log(2))
    assert T.finetune_loss_and_grads(st_, q, [0.0], [False])[0] == pytest.approx(math.log(2))
    st2 = scalar_state([2.0, 1.0])  # score 2
    std = T.finetune_loss_and_grads(st2, q, [0.0], [False])[0]
    lit = T.finetune_loss_and_grads(st2, q, [0.0], [False], literal_negative=True)[0]
    assert std == pytest.approx(math.log1p(math.exp(2))) and lit == pytest.approx(math.log1p(math.exp(-2)))


def test_adagrad_touches_only_given_rows():
    st_ = small_state(3)
    before = st_.copy()
    g = np.full((1, st_.dim), 0.5)
    M.apply_gradients(st_, {"entity": (np.array([2]), g)}, M.ModelConfig(dim=st_.dim, lr=0.1))
    assert np.allclose(st_.entity[2], before.entity[2] - 0.1 * 0.5 / (0.5 + M.EPS))
    mask = np.arange(6) != 2
    assert np.array_equal(st_.entity[mask], before.entity[mask])
    assert np.array_equal(st_.relation, before.relation)
    assert np.allclose(st_.accum["entity"][2], 0.25)
    with pytest.raises(M.TrainingError):
        M.apply_gradients(st_, {"time": (np.array([0]), np.full((1, st_.dim), np.nan))}, M.ModelConfig(dim=st_.dim))


def test_checkpoint_round_trip(tmp_path):
    st_ = small_state(4)
    st_.accum["entity"][1] = 3.0
    cfg = M.ModelConfig(dim=st_.dim, lr=0.05)
    M.save_checkpoint(tmp_path / "a.npz", st_, cfg, {"note": 1})
    M.save_checkpoint(tmp_path / "b.npz", st_, cfg, {"note": 1})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    st2, cfg2, header = M.load_checkpoint(tmp_path / "a.npz")
    assert cfg2 == cfg and header["extra"] == {"note": 1}
    for name in M.TABLES:
        assert np.array_equal(getattr(st2, name), getattr(st_, name))
        assert np.array_equal(st2.accum[name], st_.accum[name])
