"""Filtered link-prediction ranking with a split between old and new candidates.

Candidates are always an id prefix ``range(n_candidates)``: ids are assigned
in birth order, so the entities known at any snapshot form such a prefix.
Competitors with id ``>= n_local`` are born after the query's snapshot and are
counted separately, which gives both protocols from one scoring pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..kgstore import FilterIndex
from ..models.scoring import get_scorer

SIDES = ("head", "tail")
_SCORE_BUDGET = 1 << 23  # floats per scoring chunk


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class RankResult:
    query: tuple  # (h, r, t, side); side names the corrupted slot
    rank: int
    interfering_new_count: int
    best_competitor: int
    ties: int = 0

    @property
    def rank_local(self) -> int:
        return self.rank - self.interfering_new_count


@dataclass
class QueryRanks:
    """Per-query outcome of one test set at one checkpoint, head queries first."""

    triples: np.ndarray
    side: np.ndarray  # 0 = head corrupted, 1 = tail corrupted
    rank_local: np.ndarray
    interfering: np.ndarray
    ties: np.ndarray
    best: np.ndarray

    @property
    def rank_current(self) -> np.ndarray:
        return self.rank_local + self.interfering

    def ranks(self, policy: str) -> np.ndarray:
        return self.rank_current if policy_kind(policy) == "current" else self.rank_local

    def __len__(self):
        return len(self.side)


_POLICY_ALIASES = {
    "current": "current", "corrected": "current",
    "snapshot-local": "snapshot-local", "legacy": "snapshot-local", "local": "snapshot-local",
}


def policy_kind(policy: str) -> str:
    try:
        return _POLICY_ALIASES[policy]
    except KeyError:
        raise ValueError(f"unknown candidate policy {policy!r}") from None


def _scorer(model):
    return model.scorer if hasattr(model, "scorer") else get_scorer(model)


def _exclusions(filter_index: Optional[FilterIndex], h, r, t, side):
    """CSR lists of filtered competitors per query (true entity removed)."""
    ptr = np.zeros(len(h) + 1, dtype=np.int64)
    if filter_index is None:
        return ptr, np.zeros(0, dtype=np.int64)
    chunks = []
    for q in range(len(h)):
        if side == 1:
            known, truth = filter_index.tails(int(h[q]), int(r[q])), t[q]
        else:
            known, truth = filter_index.heads(int(t[q]), int(r[q])), h[q]
        if known.size:
            known = known[known != truth]
        chunks.append(known)
        ptr[q + 1] = ptr[q] + known.size
    idx = np.concatenate(chunks).astype(np.int64) if chunks else np.zeros(0, dtype=np.int64)
    return ptr, idx


def rank_testset(model, emb, triples, n_local: int, n_candidates: int,
                 filter_index: Optional[FilterIndex] = None, sides=SIDES, impl=None) -> QueryRanks:
    """Rank every head and tail query of ``triples`` against ``range(n_candidates)``."""
    t3 = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if n_candidates > emb.n_entities:
        raise ContractError(f"store covers {emb.n_entities} entities, candidate set needs {n_candidates}")
    if n_local > n_candidates:
        raise ContractError("snapshot-local candidates must be a subset of the current ones")
    if t3.size and max(int(t3[:, 0].max()), int(t3[:, 2].max())) >= n_local:
        raise ContractError("true entity outside the candidate set")
    sc = _scorer(model)
    cand = emb.entity[:n_candidates]
    parts = []
    step = max(1, _SCORE_BUDGET // max(1, n_candidates * emb.entity.shape[1]))
    for side_name in sides:
        side = 1 if side_name == "tail" else 0
        for lo in range(0, len(t3), step):
            b = t3[lo : lo + step]
            h, r, t = b[:, 0], b[:, 1], b[:, 2]
            if side == 1:
                scores = sc.score_tails(emb.entity[h], emb.relation[r], cand)
                truth = t
            else:
                scores = sc.score_heads(emb.relation[r], emb.entity[t], cand)
                truth = h
            ptr, idx = _exclusions(filter_index, h, r, t, side)
            nq = len(b)
            local, new, ties, best = kernels.count_better(
                scores, truth, np.full(nq, n_local), np.full(nq, n_candidates), ptr, idx, impl=impl)
            parts.append((b, np.full(nq, side), local + 1, new, ties, best))
    if not parts:
        z = np.zeros(0, dtype=np.int64)
        return QueryRanks(np.zeros((0, 3), dtype=np.int64), z, z, z, z, z)
    cols = list(zip(*parts))
    return QueryRanks(np.concatenate(cols[0]), *(np.concatenate(c).astype(np.int64) for c in cols[1:]))


def rank(model, emb, query, true_entity: int, candidates, filter_index: Optional[FilterIndex] = None,
         n_local: Optional[int] = None) -> RankResult:
    """Rank one query ``(h, r, None)`` or ``(None, r, t)`` over an explicit candidate list.

    Candidates with id ``>= n_local`` count as new entities; by default every
    candidate is treated as old.
    """
    h, r, t = query
    if (h is None) == (t is None):
        raise ContractError("exactly one of head/tail must be open")
    cands = np.unique(np.asarray(list(candidates), dtype=np.int64))
    if true_entity not in set(cands.tolist()):
        raise ContractError(f"true entity {true_entity} is not a candidate")
    sc = _scorer(model)
    if t is None:
        s = sc.score_tails(emb.entity[[h]], emb.relation[[r]], emb.entity[cands])[0]
        full = (h, r, true_entity, "tail")
        known = filter_index.tails(h, r) if filter_index is not None else np.zeros(0, np.int64)
    else:
        s = sc.score_heads(emb.relation[[r]], emb.entity[[t]], emb.entity[cands])[0]
        full = (true_entity, r, t, "head")
        known = filter_index.heads(t, r) if filter_index is not None else np.zeros(0, np.int64)
    ts = s[cands == true_entity][0]
    ok = (cands != true_entity) & ~np.isin(cands, known)
    better = ok & (s > ts)
    split = np.iinfo(np.int64).max if n_local is None else n_local
    new = int((better & (cands >= split)).sum())
    if ok.any():
        best = int(cands[ok][np.argmax(s[ok])])
    else:
        best = -1
    return RankResult(full, 1 + int(better.sum()), new, best, int((ok & (s == ts)).sum()))


def metrics_from_ranks(ranks) -> dict:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return {"MRR": float("nan"), "Hits@1": float("nan"), "Hits@3": float("nan"), "Hits@10": float("nan")}
    return {
        "MRR": float(np.mean(1.0 / ranks)),
        "Hits@1": float(np.mean(ranks <= 1)),
        "Hits@3": float(np.mean(ranks <= 3)),
        "Hits@10": float(np.mean(ranks <= 10)),
    }


def evaluate_testset(model, emb, test_triples, n_local: int, n_candidates: int,
                     filter_index: Optional[FilterIndex] = None, policy: str = "current") -> dict:
    """MRR and Hits@{1,3,10} over both corruption sides of every test triple.

    ``n_local`` is the entity count of the test triples' own snapshot and
    ``n_candidates`` that of the evaluated checkpoint; ``policy`` picks which
    of the two candidate sets the ranks are taken against.
    """
    q = rank_testset(model, emb, test_triples, n_local, n_candidates, filter_index)
    return metrics_from_ranks(q.ranks(policy))
