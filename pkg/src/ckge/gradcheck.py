"""Finite-difference checks of every analytic gradient in the toolkit.

Each case draws a small random instance (at most 20 entities, width at most
8), evaluates the analytic gradient of one loss or penalty, and compares every
coordinate with a central difference. Instances that sit within the
difference step of a hinge or absolute-value kink are redrawn: there the
one-sided slopes disagree and no gradient exists to compare against.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .continual.penalties import (
    align_term,
    ewc_fisher_diag,
    frequency_weights,
    reconstruction_term,
    reg_term,
)
from .models.scoring import MODEL_KINDS
from .models.store import EmbeddingStore, init_embeddings
from .models.training import ScoreModel, grad_minibatch

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-7


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    passed: bool


def _fd(f: Callable[[], float], arr: np.ndarray, eps=EPS) -> np.ndarray:
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def _rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if not a.size:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), ATOL / RTOL)))


def compare(name, value_fn, grad_fn, emb: EmbeddingStore) -> CheckResult | None:
    """Check ``grad_fn() -> (dE, dR)`` against central differences of ``value_fn``.

    Returns ``None`` when the instance straddles a kink (differences with two
    step sizes disagree).
    """
    ge, gr = grad_fn()
    results = []
    for mat, g in ((emb.entity, ge), (emb.relation, gr)):
        fd = _fd(value_fn, mat)
        fd_small = _fd(value_fn, mat, EPS / 8)
        if np.max(np.abs(fd - fd_small)) > 1e-3 * (1 + np.max(np.abs(fd))):
            return None
        results.append((fd, g))
    err = max(_rel_err(g, fd) for fd, g in results)
    ok = all(np.all(np.abs(g - fd) <= RTOL * np.maximum(np.abs(g), np.abs(fd)) + ATOL) for fd, g in results)
    return CheckResult(name, err, ok)


def _instance(kind, rng, n_ent=None, n_rel=None, dim=None):
    n_ent = n_ent or int(rng.integers(4, 21))
    n_rel = n_rel or int(rng.integers(1, 5))
    dim = dim or int(rng.choice([2, 4, 6, 8]))
    emb = init_embeddings(n_ent, n_rel, dim, seed=rng, kind=kind)
    emb.entity[:] = rng.normal(scale=0.7, size=emb.entity.shape)
    if kind != "RotatE":
        emb.relation[:] = rng.normal(scale=0.7, size=emb.relation.shape)
    return emb


def _triples(rng, n_ent, n_rel, m):
    return rng.integers(0, [n_ent, n_rel, n_ent], size=(m, 3))


def _model_case(kind, loss, rng):
    emb = _instance(kind, rng)
    model = ScoreModel(kind, loss=loss, negatives=3, margin=1.0)
    pos = _triples(rng, emb.n_entities, emb.n_relations, 4)
    neg = _triples(rng, emb.n_entities, emb.n_relations, 12).reshape(4, 3, 3)
    value = lambda: grad_minibatch(model, emb, pos, neg)[0]
    grad = lambda: grad_minibatch(model, emb, pos, neg)[1].dense(emb)
    return compare(f"{kind}/{loss}", value, grad, emb)


def _anchor(emb, rng, n_old_e, n_old_r):
    prev = EmbeddingStore(emb.entity[:n_old_e] + rng.normal(scale=0.3, size=(n_old_e, emb.entity.shape[1])),
                          emb.relation[:n_old_r] + rng.normal(scale=0.3, size=(n_old_r, emb.relation.shape[1])),
                          emb.dim, emb.kind)
    return prev


def _penalty_case(which, rng):
    kind = "TransE-L2" if which.startswith("rec") else str(rng.choice(MODEL_KINDS))
    emb = _instance(kind, rng)
    n_old_e = int(rng.integers(4, emb.n_entities + 1))
    n_old_r = int(rng.integers(1, emb.n_relations + 1))
    prev = _anchor(emb, rng, n_old_e, n_old_r)
    lam = float(rng.uniform(0.1, 2.0))
    if which == "reg-uniform":
        fn = lambda: reg_term(emb, prev, None, "L2", lam)
    elif which == "reg-L1":
        fn = lambda: reg_term(emb, prev, None, "L1", lam)
    elif which == "reg-frequency":
        w = frequency_weights(_triples(rng, emb.n_entities, emb.n_relations, 30), n_old_e, n_old_r)
        fn = lambda: reg_term(emb, prev, w, "L2", lam)
    elif which == "ewc":
        model = ScoreModel(kind, negatives=2)
        fisher = ewc_fisher_diag(model, prev, np.unique(_triples(rng, n_old_e, n_old_r, 5), axis=0), 4, rng)
        fn = lambda: reg_term(emb, prev, fisher, "L2", lam)
    elif which == "align":
        fn = lambda: align_term(emb, prev, lam)
    elif which in ("rec-structural", "rec-neighbor"):
        mode = "transe-structural" if which == "rec-structural" else "neighbor-mean"
        trip = _triples(rng, emb.n_entities, emb.n_relations, 12)
        fn = lambda: reconstruction_term(emb, trip, mode, lam, n_old_e, n_old_r)
    else:
        raise ValueError(which)
    return compare(which, lambda: fn()[0], lambda: fn()[1].dense(emb), emb)


PENALTY_CASES = ("reg-uniform", "reg-L1", "reg-frequency", "ewc", "align", "rec-structural", "rec-neighbor")


def run_suite(n_per_case: int = 10, seed: int = 0, max_redraws: int = 20) -> list[CheckResult]:
    """``n_per_case`` passing-or-failing instances for every model kind/loss and penalty."""
    rng = np.random.default_rng(seed)
    cases = [(lambda k=k, lo=lo: _model_case(k, lo, rng)) for k in MODEL_KINDS for lo in ("margin", "logistic")]
    cases += [(lambda w=w: _penalty_case(w, rng)) for w in PENALTY_CASES]
    out = []
    for case in cases:
        for _ in range(n_per_case):
            for _ in range(max_redraws):
                res = case()
                if res is not None:
                    out.append(res)
                    break
            else:
                out.append(CheckResult("kink-redraw-exhausted", float("inf"), False))
    return out
