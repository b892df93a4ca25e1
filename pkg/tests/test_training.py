import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkgaug import data as D
from tkgaug import filtering as F
from tkgaug import model as M
from tkgaug import scoring as S
from tkgaug import training as T
from tkgaug import synthetic
import oracles as O


def test_sample_excludes_true_object():
    out = T.sample_negatives((0, 0, 1, 0), 3, 10, seed=0)
    assert {e for _, _, e, _ in out} == {0, 2}
    assert all(q[:2] == (0, 0) and q[3] == 0 for q in out)


def test_sample_exhaustion_and_determinism():
    idx = D.build_index([(0, 0, 1, 0), (0, 0, 2, 0)], 4, 1, 1)
    aug = T.AugmentedSets.empty()
    aug.exclusions = {(0, 0, 1, 0): frozenset({0})}
    out = T.sample_negatives((0, 0, 1, 0), 4, 5, 7, idx, aug)
    assert out == [(0, 0, 3, 0)]
    assert T.sample_negatives((0, 0, 1, 0), 50, 5, 9) == T.sample_negatives((0, 0, 1, 0), 50, 5, 9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_negative_purity(seed):
    rng = np.random.default_rng(seed)
    facts, n_e, n_r, n_t = O.random_facts(rng)
    idx = D.build_index(facts, n_e, n_r, n_t)
    cands = F.filter_all(idx, F.FilterParams(m=3, k_sparse=30))
    aug = T.build_augmented_sets(cands)
    excl = F.exclusions_by_source(cands)
    negs = T.sample_negative_objects(np.array(facts), n_e, 8, rng, idx, aug)
    fset = set(facts)
    for f, row in zip(facts, negs.tolist()):
        s, r, o, t = f
        drawn = [e for e in row if e >= 0]
        assert len(drawn) == len(set(drawn))
        for e in drawn:
            q = (s, r, e, t)
            assert e != o and q not in fset and q not in excl.get(f, set())
        admissible = {e for e in range(n_e) if e != o and (s, r, e, t) not in fset
                      and (s, r, e, t) not in excl.get(f, set())}
        assert len(drawn) == min(8, len(admissible))


def test_mining_rules():
    st_ = M.ModelState(np.array([[1.0], [2.0], [1.0], [0.5]]), np.ones((1, 1)), np.ones((1, 1)))
    # scores for (0, 0, e, 0) are E[e]: o=1 beats everyone, o=2 ties with 0
    assert len(T.mine_hard_positives(st_, [(0, 0, 1, 0)], 4, 3, seed=0)) == 0
    assert T.mine_hard_positives(st_, [(0, 0, 2, 0)], 4, 3, seed=0).tolist() == [[0, 0, 2, 0]]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mining_matches_loop(seed):
    rng = np.random.default_rng(seed)
    facts, n_e, n_r, n_t = O.random_facts(rng)
    idx = D.build_index(facts, n_e, n_r, n_t)
    state = M.init_model(M.ModelConfig(dim=4), (n_e, n_r, n_t), rng)
    got = T.mine_hard_positives(state, facts, n_e, 5, seed, idx)
    draws = T.sample_negative_objects(np.array(facts), n_e, 5, T.derive_rng(seed, "mine"), idx)
    E, R, Tm = state.entity.tolist(), state.relation.tolist(), state.time.tolist()
    want = [f for f, row in zip(facts, draws.tolist()) if O.hard_positive(E, R, Tm, f, [e for e in row if e >= 0])]
    assert sorted(map(tuple, got.tolist())) == sorted(want)


def test_augmented_sets_labels_and_disjointness():
    syn = synthetic.generate(synthetic.SyntheticSpec(n_entities=40, n_relations=4, n_timestamps=12, n_pairs=150), seed=2)
    d = D.add_inverse_relations(syn.dataset)
    idx = D.build_indices(d)
    cands = F.filter_all(idx, F.FilterParams(k_sparse=40))
    scored = S.score_candidates(cands, idx, S.triangle_scores(idx), S.ScoringParams())
    aug = T.build_augmented_sets(cands, scored)
    assert aug.n_false_negatives > 0 and len(aug.negatives) > 0
    assert np.all((aug.labels > 0) & (aug.labels <= 1)) and aug.labels.max() == 1.0
    aug2 = aug.with_hard_positives(d.train[:5])
    assert aug2.labels[aug.n_false_negatives:].tolist() == [1.0] * 5
    pos = set(map(tuple, aug2.positives.tolist()))
    assert not pos & set(map(tuple, aug2.negatives.tolist()))


def tiny_setup(seed=0):
    syn = synthetic.generate(synthetic.SyntheticSpec(n_entities=40, n_relations=4, n_timestamps=12, n_pairs=150), seed=seed)
    d = D.add_inverse_relations(syn.dataset)
    idx = D.build_indices(d)
    cands = F.filter_all(idx, F.FilterParams(k_sparse=40))
    scored = S.score_candidates(cands, idx, S.triangle_scores(idx), S.ScoringParams())
    return d, idx, T.build_augmented_sets(cands, scored)


CFG = M.ModelConfig(dim=8, lr=0.1)


def test_pure_pretraining_schedule():
    d, idx, aug = tiny_setup()
    sched = T.TrainSchedule(epochs_total=4, pretrain_epochs=4, batches_per_epoch=3, n_neg=5, eval_every=2)
    _, log = T.run_two_stage(d, idx, aug, CFG, sched, seed=1)
    assert not [r for r in log if r["stage"] == "finetune"]
    assert [r["epoch"] for r in log if r["stage"] == "pretrain" and "loss" in r] == [1, 2, 3, 4]


def test_empty_augmentation_keeps_pretrained_model(monkeypatch):
    d, idx, _ = tiny_setup()
    monkeypatch.setattr(T, "mine_hard_positives", lambda *a, **k: np.zeros((0, 4), dtype=np.int64))
    sched = T.TrainSchedule(epochs_total=6, pretrain_epochs=3, batches_per_epoch=3, n_neg=5, eval_every=1)
    st2, log = T.run_two_stage(d, idx, T.AugmentedSets.empty(), CFG, sched, seed=1)
    assert not [r for r in log if r["stage"] == "finetune"]
    pre = T.TrainSchedule(epochs_total=3, pretrain_epochs=3, batches_per_epoch=3, n_neg=5, eval_every=1)
    st1, _ = T.run_two_stage(d, idx, T.AugmentedSets.empty(), CFG, pre, seed=1)
    assert np.array_equal(st1.entity, st2.entity)
    same, loss = T.finetune_step(st1, np.zeros((0, 4), dtype=np.int64), [], [], CFG)
    assert loss == 0.0 and same is st1


def test_two_stage_deterministic():
    d, idx, aug = tiny_setup()
    sched = T.TrainSchedule(epochs_total=6, pretrain_epochs=2, batches_per_epoch=3, n_neg=5, eval_every=2)
    a, log_a = T.run_two_stage(d, idx, aug, CFG, sched, seed=3)
    b, log_b = T.run_two_stage(d, idx, aug, CFG, sched, seed=3)
    assert log_a == log_b
    assert np.array_equal(a.entity, b.entity)
    stages = {r["stage"] for r in log_a}
    assert {"pretrain", "mine", "finetune"} <= stages
    base, log_c = T.run_two_stage(d, idx, aug, CFG, sched, seed=3, augment=False)
    assert {r["stage"] for r in log_c} == {"pretrain"}


def test_schedule_validation():
    with pytest.raises(ValueError):
        T.TrainSchedule(epochs_total=5, pretrain_epochs=6)
    with pytest.raises(ValueError):
        T.TrainSchedule(n_neg=0)
