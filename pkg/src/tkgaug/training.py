"""Two-stage training: contrastive pre-training, then augmented fine-tuning.

Pre-training uses a sampled softmax over the positive object and ``n_neg``
corrupted objects, where candidates flagged as potential false negatives
never serve as negatives. The pre-trained model then marks the train facts
it fails to rank above all their negatives (model-specific hard samples).
Fine-tuning applies a sigmoid loss to identified false negatives (soft
labels) and hard samples (label 1) against hard negatives.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import Dataset, TkgIndex, known_objects
from .scoring import FALSE_NEGATIVE

log = logging.getLogger(__name__)


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Generator for one named stage; stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(label.encode())]))


@dataclass(frozen=True)
class TrainSchedule:
    epochs_total: int = 1000
    pretrain_epochs: int = 20
    batches_per_epoch: int = 100
    n_neg: int = 50
    patience: int = 50  # in evaluation rounds
    eval_every: int = 10

    def __post_init__(self):
        if not 0 <= self.pretrain_epochs <= self.epochs_total:
            raise ValueError("need 0 <= pretrain_epochs <= epochs_total")
        if self.n_neg < 1 or self.batches_per_epoch < 1 or self.eval_every < 1:
            raise ValueError("n_neg, batches_per_epoch and eval_every must be >= 1")


@dataclass
class AugmentedSets:
    """Fine-tuning material plus negative-sampling exclusions.

    ``exclusions[source]`` holds the objects of candidates derived from
    ``source`` that share its ``(s, r, t)``: those are the only ones an
    object corruption of ``source`` could collide with.
    """

    positives: np.ndarray
    labels: np.ndarray
    negatives: np.ndarray
    exclusions: dict = field(default_factory=dict)
    n_false_negatives: int = 0

    @classmethod
    def empty(cls) -> "AugmentedSets":
        z = np.zeros((0, 4), dtype=np.int64)
        return cls(z, np.zeros(0), z.copy())

    def excluded_objects(self, f) -> frozenset:
        return self.exclusions.get(tuple(f), frozenset())

    def with_hard_positives(self, hard) -> "AugmentedSets":
        hard = np.asarray(hard, dtype=np.int64).reshape(-1, 4)
        return AugmentedSets(
            np.concatenate([self.positives[: self.n_false_negatives], hard]),
            np.concatenate([self.labels[: self.n_false_negatives], np.ones(len(hard))]),
            self.negatives, self.exclusions, self.n_false_negatives)


def build_augmented_sets(candidates, scored=None) -> AugmentedSets:
    """Exclusions from every candidate; positives/negatives from the scoring.

    Smooth labels are divided by their maximum so they lie in ``(0, 1]``.
    """
    excl: dict = {}
    for c in candidates:
        q, src = tuple(c.candidate), tuple(c.source)
        if (q[0], q[1], q[3]) == (src[0], src[1], src[3]):
            excl.setdefault(src, set()).add(q[2])
    excl = {k: frozenset(v) for k, v in excl.items()}
    aug = AugmentedSets.empty()
    aug.exclusions = excl
    if not scored:
        return aug
    fn = [sc for sc in scored if sc.classification == FALSE_NEGATIVE]
    hn = [sc for sc in scored if sc.classification != FALSE_NEGATIVE]
    labels = np.array([sc.smooth_label for sc in fn], dtype=np.float64)
    if len(labels):
        labels = labels / labels.max()
    pos = np.array([sc.candidate.candidate for sc in fn], dtype=np.int64).reshape(-1, 4)
    neg = np.array([sc.candidate.candidate for sc in hn], dtype=np.int64).reshape(-1, 4)
    return AugmentedSets(pos, labels, neg, excl, n_false_negatives=len(fn))


# ---------------------------------------------------------------------------
# negative sampling


def _banned(batch, idx: TkgIndex | None, aug: AugmentedSets | None):
    rows, ents = [], []
    for i, (s, r, o, t) in enumerate(batch.tolist()):
        banned = {o}
        if idx is not None:
            banned |= idx.known_objects.get((s, r, t), frozenset())
        if aug is not None:
            banned |= aug.excluded_objects((s, r, o, t))
        rows.extend([i] * len(banned))
        ents.extend(banned)
    return np.asarray(rows, dtype=np.int64), np.asarray(ents, dtype=np.int64)


def sample_negative_objects(batch, n_entities: int, n_neg: int, rng: np.random.Generator,
                            idx: TkgIndex | None = None, aug: AugmentedSets | None = None) -> np.ndarray:
    """``(B, n_neg)`` distinct corrupted objects per fact, ``-1`` padded.

    Objects are drawn uniformly without replacement from the entities that
    are not the true object, not a known train object for ``(s, r, t)``
    (when ``idx`` is given) and not excluded by ``aug``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    keys = rng.random((len(batch), n_entities))
    rows, ents = _banned(batch, idx, aug)
    keys[rows, ents] = np.inf
    k = min(n_neg, n_entities)
    if k < n_entities:
        part = np.argpartition(keys, k - 1, axis=1)[:, :k]
    else:
        part = np.tile(np.arange(n_entities), (len(batch), 1))
    order = np.take_along_axis(keys, part, axis=1).argsort(axis=1, kind="stable")
    part = np.take_along_axis(part, order, axis=1)
    ok = np.isfinite(np.take_along_axis(keys, part, axis=1))
    out = np.where(ok, part, -1)
    if k < n_neg:
        out = np.concatenate([out, -np.ones((len(batch), n_neg - k), dtype=np.int64)], axis=1)
    return out


def sample_negatives(f, n_entities: int, n_neg: int, seed, idx=None, aug=None) -> list:
    """Corrupted quadruples ``(s, r, e, t)`` for one fact."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    objs = sample_negative_objects(np.asarray([f]), n_entities, n_neg, rng, idx, aug)[0]
    s, r, _, t = f
    return [(s, r, int(e), t) for e in objs if e >= 0]


# ---------------------------------------------------------------------------
# losses


def pretrain_loss_and_grads(state: M.ModelState, batch, neg_objects, reg_weight: float = 0.0):
    """Sampled-softmax loss summed over ``batch`` and its row gradients.

    The softmax runs over the positive and its (unpadded) negatives.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    neg_objects = np.asarray(neg_objects, dtype=np.int64).reshape(len(batch), -1)
    objs = np.concatenate([batch[:, 2:3], neg_objects], axis=1)
    mask = objs >= 0
    safe = np.where(mask, objs, 0)
    s, r, _, t = batch.T
    query = state.entity[s] * state.relation[r] * state.time[t]
    scores = np.einsum("bd,bkd->bk", query, state.entity[safe])
    scores = np.where(mask, scores, -np.inf)
    top = scores.max(axis=1, keepdims=True)
    w = np.exp(scores - top)
    z = w.sum(axis=1, keepdims=True)
    loss = float(np.sum(np.log(z[:, 0]) + top[:, 0] - scores[:, 0]))
    d = w / z
    d[:, 0] -= 1.0
    grads = M.query_gradients(state, batch[:, [0, 1, 3]], np.where(mask, objs, -1), d)
    b, k = np.nonzero(mask)
    quads = np.stack([s[b], r[b], objs[b, k], t[b]], axis=1)
    reg, reg_grads = M.l2_penalty(state, quads, reg_weight)
    return loss + reg, M.merge_gradients(grads, reg_grads)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def finetune_loss_and_grads(state: M.ModelState, quads, labels, positive, reg_weight: float = 0.0,
                            literal_negative: bool = False):
    """Sigmoid loss: ``-l log s(p)`` for positives, ``-log s(-p)`` for negatives.

    ``literal_negative`` switches negatives to ``-log s(p)``.
    """
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    labels = np.asarray(labels, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    p = M.score_quads(state, quads)
    neg_sign = -1.0 if literal_negative else 1.0
    loss_terms = np.where(positive, labels * _softplus(-p), _softplus(neg_sign * p))
    dp = np.where(positive, -labels * _sigmoid(-p), neg_sign * _sigmoid(neg_sign * p))
    grads = M.quad_gradients(state, quads, dp)
    reg, reg_grads = M.l2_penalty(state, quads, reg_weight)
    return float(loss_terms.sum()) + reg, M.merge_gradients(grads, reg_grads)


def _checked(loss, stage):
    if not np.isfinite(loss):
        raise M.TrainingError(f"non-finite {stage} loss {loss}")
    return loss


def pretrain_step(state, batch, neg_objects, cfg: M.ModelConfig):
    loss, grads = pretrain_loss_and_grads(state, batch, neg_objects, cfg.reg_weight)
    M.apply_gradients(state, grads, cfg)
    return state, _checked(loss, "pre-training")


def finetune_step(state, quads, labels, positive, cfg: M.ModelConfig, literal_negative=False):
    if len(quads) == 0:
        return state, 0.0
    loss, grads = finetune_loss_and_grads(state, quads, labels, positive, cfg.reg_weight, literal_negative)
    M.apply_gradients(state, grads, cfg)
    return state, _checked(loss, "fine-tuning")


# ---------------------------------------------------------------------------
# hard-sample mining


def mine_hard_positives(state, facts, n_entities: int, n_neg: int, seed: int,
                        idx: TkgIndex | None = None, aug: AugmentedSets | None = None,
                        batch_size: int = 1024) -> np.ndarray:
    """Facts whose score does not beat every one of a fresh negative draw.

    A tie with any negative counts as failure.
    """
    facts = np.asarray(facts, dtype=np.int64).reshape(-1, 4)
    rng = derive_rng(seed, "mine")
    hard = []
    for lo in range(0, len(facts), batch_size):
        batch = facts[lo:lo + batch_size]
        negs = sample_negative_objects(batch, n_entities, n_neg, rng, idx, aug)
        s, r, o, t = batch.T
        query = state.entity[s] * state.relation[r] * state.time[t]
        pos = np.einsum("bd,bd->b", query, state.entity[o])
        neg = np.einsum("bd,bkd->bk", query, state.entity[np.where(negs >= 0, negs, 0)])
        neg = np.where(negs >= 0, neg, -np.inf)
        hard.append(batch[(neg >= pos[:, None]).any(axis=1)])
    return np.concatenate(hard) if hard else np.zeros((0, 4), dtype=np.int64)


# ---------------------------------------------------------------------------
# orchestration


def validation_mrr(state, d: Dataset, known=None, max_facts: int | None = None) -> float:
    from .evaluation import filtered_ranks

    facts = d.valid if max_facts is None else d.valid[:max_facts]
    if len(facts) == 0:
        return float("nan")
    known = known if known is not None else known_objects(d.train, d.valid, d.test)
    return float(np.mean(1.0 / filtered_ranks(state, facts, known)))


def run_two_stage(d: Dataset, idx: TkgIndex, aug: AugmentedSets | None, cfg: M.ModelConfig,
                  sched: TrainSchedule, seed: int = 0, augment: bool = True,
                  literal_negative: bool = False, callback=None):
    """Train a model; returns ``(best state, log records)``.

    ``augment=False`` is the plain baseline: uniform negatives (only the true
    object excluded) for the whole schedule. Either way the returned state
    is the validation-best checkpoint among evaluation rounds (for the
    augmented run: from the pre-trained model onwards).
    """
    records = []

    def emit(rec):
        records.append(rec)
        if callback is not None:
            callback(rec)

    n_e = d.n_entities
    state = M.init_model(cfg, d.sizes, derive_rng(seed, "init"))
    known = known_objects(d.train, d.valid, d.test)
    aug = aug if aug is not None else AugmentedSets.empty()
    pre_epochs = sched.pretrain_epochs if augment else sched.epochs_total
    rng = derive_rng(seed, "pretrain")
    best = {"mrr": -np.inf, "state": state.copy(), "epoch": 0, "stale": 0}

    def evaluate_round(epoch, stage):
        mrr = validation_mrr(state, d, known)
        emit({"epoch": epoch, "stage": stage, "valid_mrr": mrr})
        if np.isnan(mrr):
            # no validation split: keep the latest state
            best.update(mrr=-np.inf, state=state.copy(), epoch=epoch)
            return False
        if mrr > best["mrr"]:
            best.update(mrr=mrr, state=state.copy(), epoch=epoch, stale=0)
        else:
            best["stale"] += 1
        return best["stale"] >= sched.patience

    stop = False
    for epoch in range(1, pre_epochs + 1):
        order = rng.permutation(len(d.train))
        total = 0.0
        for part in np.array_split(order, sched.batches_per_epoch):
            if len(part) == 0:
                continue
            batch = d.train[part]
            negs = sample_negative_objects(batch, n_e, sched.n_neg, rng,
                                           idx if augment else None, aug if augment else None)
            state, loss = pretrain_step(state, batch, negs, cfg)
            total += loss
        emit({"epoch": epoch, "stage": "pretrain", "loss": total})
        if not augment and (epoch % sched.eval_every == 0 or epoch == pre_epochs):
            if evaluate_round(epoch, "pretrain"):
                stop = True
                break

    if not augment:
        return best["state"], records

    evaluate_round(pre_epochs, "pretrain")
    hard = mine_hard_positives(state, d.train, n_e, sched.n_neg, seed, idx, aug)
    aug = aug.with_hard_positives(hard)
    emit({"epoch": pre_epochs, "stage": "mine", "hard_samples": int(len(hard)),
          "false_negatives": int(aug.n_false_negatives), "hard_negatives": int(len(aug.negatives))})

    quads = np.concatenate([aug.positives, aug.negatives])
    labels = np.concatenate([aug.labels, np.zeros(len(aug.negatives))])
    positive = np.concatenate([np.ones(len(aug.positives), bool), np.zeros(len(aug.negatives), bool)])
    if len(quads) == 0:
        return best["state"], records

    rng = derive_rng(seed, "finetune")
    for epoch in range(pre_epochs + 1, sched.epochs_total + 1):
        if stop:
            break
        order = rng.permutation(len(quads))
        total = 0.0
        for part in np.array_split(order, sched.batches_per_epoch):
            if len(part) == 0:
                continue
            state, loss = finetune_step(state, quads[part], labels[part], positive[part], cfg,
                                        literal_negative)
            total += loss
        emit({"epoch": epoch, "stage": "finetune", "loss": total})
        if epoch % sched.eval_every == 0 or epoch == sched.epochs_total:
            stop = evaluate_round(epoch, "finetune")
    return best["state"], records
