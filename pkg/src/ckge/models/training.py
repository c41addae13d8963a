"""Negative sampling, the base ranking loss, sparse row updates and the epoch loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import kernels
from .scoring import get_scorer
from .store import EmbeddingStore, normalize_rows

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, message, triple=None):
        super().__init__(message)
        self.triple = triple


@dataclass
class ScoreModel:
    """Model kind plus the hyperparameters of its base loss."""

    kind: str = "TransE-L2"
    margin: float = 1.0
    negatives: int = 10
    lr: float = 0.01
    optimizer: str = "sgd"
    loss: str = "margin"

    def __post_init__(self):
        self.scorer = get_scorer(self.kind)
        if self.loss not in ("margin", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "margin" and self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.optimizer not in ("sgd", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class SparseGrad:
    """Partial derivatives for the touched rows only (rows sorted and unique once coalesced)."""

    entity_rows: np.ndarray
    entity_grads: np.ndarray
    relation_rows: np.ndarray
    relation_grads: np.ndarray

    @classmethod
    def empty(cls, ew, rw):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros((0, ew)), z.copy(), np.zeros((0, rw)))

    @classmethod
    def build(cls, ent_rows, ent_vals, rel_rows, rel_vals, n_ent=None, n_rel=None):
        ent_rows = np.asarray(ent_rows, dtype=np.int64)
        rel_rows = np.asarray(rel_rows, dtype=np.int64)
        n_ent = n_ent or (int(ent_rows.max()) + 1 if ent_rows.size else 1)
        n_rel = n_rel or (int(rel_rows.max()) + 1 if rel_rows.size else 1)
        er, ev = kernels.scatter_add_rows(ent_rows, ent_vals, n_ent)
        rr, rv = kernels.scatter_add_rows(rel_rows, rel_vals, n_rel)
        return cls(er, ev, rr, rv)

    def __add__(self, other: "SparseGrad") -> "SparseGrad":
        return SparseGrad.build(
            np.concatenate([self.entity_rows, other.entity_rows]),
            np.vstack([self.entity_grads, other.entity_grads]),
            np.concatenate([self.relation_rows, other.relation_rows]),
            np.vstack([self.relation_grads, other.relation_grads]),
        )

    def scaled(self, c: float) -> "SparseGrad":
        return SparseGrad(self.entity_rows, self.entity_grads * c, self.relation_rows, self.relation_grads * c)

    def dense(self, emb: EmbeddingStore):
        ge = np.zeros_like(emb.entity)
        gr = np.zeros_like(emb.relation)
        ge[self.entity_rows] = self.entity_grads
        gr[self.relation_rows] = self.relation_grads
        return ge, gr


def negative_sample(triples, n_entities, k, filter_index, rng, max_tries=50):
    """``k`` filtered corruptions per positive -> ``(B, k, 3)``.

    Each negative replaces the head or the tail (fair coin) with a uniformly
    drawn entity; draws that form a known triple are redrawn.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if k < 1:
        raise ValueError("k must be >= 1")
    b = triples.shape[0]
    neg = np.repeat(triples[:, None, :], k, axis=1)
    corrupt_head = rng.random((b, k)) < 0.5
    cols = np.where(corrupt_head, 0, 2)
    pending = np.ones((b, k), dtype=bool)
    for _ in range(max_tries):
        idx = np.nonzero(pending)
        if idx[0].size == 0:
            break
        draws = rng.integers(0, n_entities, size=idx[0].size)
        neg[idx[0], idx[1], cols[idx]] = draws
        bad = filter_index.contains_many(neg[idx])
        pending[:] = False
        pending[idx[0][bad], idx[1][bad]] = True
    if pending.any():
        # the chosen side may be exhausted; try the other side before giving up
        idx = np.nonzero(pending)
        for bi, kj in zip(*idx):
            h, r, t = triples[bi]
            for side in (cols[bi, kj], 2 - cols[bi, kj]):
                known = filter_index.tails(h, r) if side == 2 else filter_index.heads(t, r)
                free = np.setdiff1d(np.arange(n_entities), known, assume_unique=False)
                if free.size:
                    neg[bi, kj] = triples[bi]
                    neg[bi, kj, side] = free[rng.integers(free.size)]
                    pending[bi, kj] = False
                    break
        if pending.any():
            bi = int(np.nonzero(pending)[0][0])
            raise SamplingError(f"no valid corruption for triple {tuple(triples[bi].tolist())}")
    return neg


def _dloss(model: ScoreModel, pos_scores, neg_scores):
    """Loss per positive and dL/dscore for positives ``(B,)`` and negatives ``(B, k)``."""
    k = neg_scores.shape[1]
    if model.loss == "margin":
        viol = model.margin - pos_scores[:, None] + neg_scores
        active = viol > 0
        loss = np.where(active, viol, 0.0).sum(axis=1) / k
        gneg = active / k
        gpos = -gneg.sum(axis=1)
    else:
        loss = np.logaddexp(0.0, -pos_scores) + np.logaddexp(0.0, neg_scores).sum(axis=1) / k
        gpos = -1.0 / (1.0 + np.exp(pos_scores))
        gneg = 1.0 / (1.0 + np.exp(-neg_scores)) / k
    return loss, gpos, gneg


def _slot_grads(model, emb, positives, negatives):
    """Loss per positive plus per-slot row ids and gradient rows (not yet coalesced)."""
    sc = model.scorer
    E, R = emb.entity, emb.relation
    b, k = negatives.shape[:2]
    allt = np.concatenate([positives[:, None, :], negatives], axis=1).reshape(-1, 3)
    h, r, t = allt.T
    s = sc.score(E[h], R[r], E[t]).reshape(b, k + 1)
    loss, gpos, gneg = _dloss(model, s[:, 0], s[:, 1:])
    coef = np.concatenate([gpos[:, None], gneg], axis=1).reshape(-1, 1)
    gh, gr, gt = sc.grad(E[h], R[r], E[t])
    return loss, h, r, t, coef * gh, coef * gr, coef * gt


def grad_minibatch(model: ScoreModel, emb: EmbeddingStore, positives, negatives):
    """Summed base loss over the minibatch and its exact sparse gradient."""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(positives.shape[0], -1, 3)
    loss, h, r, t, gh, gr, gt = _slot_grads(model, emb, positives, negatives)
    bad = ~np.isfinite(loss)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise NumericError(f"non-finite loss at triple {tuple(positives[i].tolist())}",
                           tuple(positives[i].tolist()))
    grad = SparseGrad.build(
        np.concatenate([h, t]), np.vstack([gh, gt]), r, gr, emb.n_entities, emb.n_relations
    )
    return float(loss.sum()), grad


@dataclass
class UpdateMask:
    """``True`` marks frozen coordinates; shapes ``(n,)`` (whole rows) or ``(n, width)``."""

    entity: Optional[np.ndarray] = None
    relation: Optional[np.ndarray] = None

    @classmethod
    def freeze_prefix(cls, emb, n_entities, n_relations):
        e = np.zeros(emb.n_entities, dtype=bool)
        r = np.zeros(emb.n_relations, dtype=bool)
        e[:n_entities] = True
        r[:n_relations] = True
        return cls(e, r)

    def frozen_rows(self, which, n):
        m = self.entity if which == "entity" else self.relation
        if m is None:
            return np.zeros(n, dtype=bool)
        return m if m.ndim == 1 else m.all(axis=1)

    def any_frozen_rows(self, which, n):
        m = self.entity if which == "entity" else self.relation
        if m is None:
            return np.zeros(n, dtype=bool)
        return m if m.ndim == 1 else m.any(axis=1)


class Optimizer:
    """Plain SGD, or Adagrad with a per-coordinate accumulator."""

    def __init__(self, kind="sgd", eps=1e-10):
        if kind not in ("sgd", "adagrad"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.eps = eps
        self.accum = {}

    def _accum(self, which, shape):
        a = self.accum.get(which)
        if a is None or a.shape[1] != shape[1]:
            a = np.zeros(shape)
        elif a.shape[0] < shape[0]:
            a = np.vstack([a, np.zeros((shape[0] - a.shape[0], shape[1]))])
        self.accum[which] = a
        return a

    def step(self, which, matrix, rows, grads, lr):
        if rows.size == 0:
            return
        if self.kind == "sgd":
            matrix[rows] -= lr * grads
        else:
            acc = self._accum(which, matrix.shape)
            acc[rows] += grads * grads
            matrix[rows] -= lr * grads / (np.sqrt(acc[rows]) + self.eps)


def apply_update(emb: EmbeddingStore, grad: SparseGrad, optimizer: Optimizer, lr: float,
                 update_mask: Optional[UpdateMask] = None) -> EmbeddingStore:
    """In-place optimizer step that never writes masked coordinates."""
    for which, rows, g in (("entity", grad.entity_rows, grad.entity_grads),
                           ("relation", grad.relation_rows, grad.relation_grads)):
        matrix = emb.matrix(which)
        m = None if update_mask is None else (update_mask.entity if which == "entity" else update_mask.relation)
        if m is not None:
            if m.shape[0] != matrix.shape[0] or (m.ndim == 2 and m.shape != matrix.shape):
                raise ValueError(f"{which} mask shape {m.shape} does not match {matrix.shape}")
            if m.ndim == 1:
                keep = ~m[rows]
                rows, g = rows[keep], g[keep]
            else:
                frozen = m[rows]
                if frozen.any():
                    before = matrix[rows]
                    optimizer.step(which, matrix, rows, np.where(frozen, 0.0, g), lr)
                    matrix[rows] = np.where(frozen, before, matrix[rows])
                    continue
        optimizer.step(which, matrix, rows, g, lr)
    return emb


Penalty = Callable[[EmbeddingStore], "tuple[float, SparseGrad]"]


@dataclass
class TrainConfig:
    batch_size: int = 512
    renormalize: bool = True
    max_tries: int = 50
    shuffle: bool = True


@dataclass
class EpochStats:
    mean_loss: float
    penalty: float
    rows_touched: int
    n_batches: int
    untrained_entities: list = field(default_factory=list)


def renormalize_entities(emb: EmbeddingStore, update_mask: Optional[UpdateMask] = None):
    """Unit-length TransE-family entity rows, skipping rows with any frozen coordinate."""
    sc = get_scorer(emb.kind)
    if not sc.translational:
        return
    skip = (update_mask.any_frozen_rows("entity", emb.n_entities)
            if update_mask is not None else np.zeros(emb.n_entities, dtype=bool))
    rows = np.nonzero(~skip)[0]
    emb.entity[rows] = normalize_rows(emb.entity[rows])


def train_epoch(model: ScoreModel, emb: EmbeddingStore, triples, cfg: TrainConfig,
                extra_loss_terms: Sequence[Penalty] = (), update_mask: Optional[UpdateMask] = None,
                rng: Optional[np.random.Generator] = None, *, filter_index=None,
                optimizer: Optional[Optimizer] = None, replay: Optional[Callable] = None,
                check_entities: Optional[range] = None) -> EpochStats:
    """One pass of minibatch updates over ``triples``.

    ``replay`` (optional) maps ``rng`` to extra positives joined to every batch.
    The gradient of each step is the base loss gradient plus every penalty's,
    except that under SGD a penalty exposing ``prox`` is applied as a proximal
    step right after the gradient update.
    ``check_entities`` lists ids expected to be trained; those that occur in no
    positive triple of the epoch are reported in ``untrained_entities``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if triples.shape[0] == 0:
        raise ValueError("train_epoch needs at least one triple")
    rng = rng if rng is not None else np.random.default_rng()
    optimizer = optimizer or Optimizer(model.optimizer)
    if filter_index is None:
        from ..kgstore import FilterIndex

        filter_index = FilterIndex(triples, emb.n_entities, emb.n_relations)
    order = rng.permutation(triples.shape[0]) if cfg.shuffle else np.arange(triples.shape[0])
    total_loss = total_pen = 0.0
    n_pos = 0
    touched_e = np.zeros(emb.n_entities, dtype=bool)
    touched_r = np.zeros(emb.n_relations, dtype=bool)
    in_positive = np.zeros(emb.n_entities, dtype=bool)
    n_batches = 0
    for lo in range(0, order.size, cfg.batch_size):
        batch = triples[order[lo : lo + cfg.batch_size]]
        if replay is not None:
            extra = replay(rng)
            if len(extra):
                batch = np.concatenate([batch, extra])
        in_positive[batch[:, 0]] = True
        in_positive[batch[:, 2]] = True
        neg = negative_sample(batch, emb.n_entities, model.negatives, filter_index, rng, cfg.max_tries)
        loss, grad = grad_minibatch(model, emb, batch, neg)
        total_loss += loss
        n_pos += batch.shape[0]
        proximal = []
        for term in extra_loss_terms:
            if optimizer.kind == "sgd" and hasattr(term, "prox"):
                total_pen += term.value(emb)
                proximal.append(term)
                continue
            value, pgrad = term(emb)
            total_pen += value
            grad = grad + pgrad
        touched_e[grad.entity_rows] = True
        touched_r[grad.relation_rows] = True
        apply_update(emb, grad, optimizer, model.lr, update_mask)
        for term in proximal:
            term.prox(emb, model.lr, update_mask)
        model.scorer.postprocess(emb, grad.relation_rows)
        n_batches += 1
    if cfg.renormalize:
        renormalize_entities(emb, update_mask)
    if not (np.isfinite(emb.entity).all() and np.isfinite(emb.relation).all()):
        raise NumericError("embeddings became non-finite during the epoch")
    untrained = []
    if check_entities is not None:
        ids = np.asarray(check_entities, dtype=np.int64)
        untrained = ids[~in_positive[ids]].tolist()
    return EpochStats(total_loss / max(n_pos, 1), total_pen, int(touched_e.sum() + touched_r.sum()),
                      n_batches, untrained)
