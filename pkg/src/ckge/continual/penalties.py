"""Extra loss terms that resist forgetting: anchoring, reconstruction, alignment, EWC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..models.store import EmbeddingStore
from ..models.training import ScoreModel, SparseGrad, _slot_grads, negative_sample

_DEGENERATE = 1e-12


class PenaltyConfigError(ValueError):
    pass


@dataclass
class FisherWeights:
    """Diagonal Fisher estimate, same shapes as the entity/relation matrices."""

    entity: np.ndarray
    relation: np.ndarray

    def __add__(self, other: "FisherWeights") -> "FisherWeights":
        return FisherWeights(_add_padded(self.entity, other.entity), _add_padded(self.relation, other.relation))


def _add_padded(a, b):
    rows = max(a.shape[0], b.shape[0])
    cols = max(a.shape[1], b.shape[1])
    out = np.zeros((rows, cols))
    out[: a.shape[0], : a.shape[1]] += a
    out[: b.shape[0], : b.shape[1]] += b
    return out


def _row_weights(w, n_rows, width, which):
    """Broadcast a weight spec to ``(n_rows, width)``: None -> 1, (n,) -> per row, (n, w) as is."""
    if w is None:
        return np.ones((n_rows, 1))
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] < n_rows:
        raise PenaltyConfigError(f"missing {which} weight for old row {w.shape[0]}")
    w = w[:n_rows]
    if w.ndim == 1:
        return w[:, None]
    if w.shape[1] < width:
        # coordinates added by a dimension expansion carry no importance estimate yet
        return np.pad(w, ((0, 0), (0, width - w.shape[1])))
    return w[:, :width]


def reg_term(emb_now: EmbeddingStore, emb_prev: EmbeddingStore, weights=None, psi: str = "L2",
             lam: float = 1.0):
    """Weighted change penalty over the rows that exist in ``emb_prev``.

    ``weights`` is ``None`` (uniform), a pair ``(entity_w, relation_w)`` of
    per-row or per-coordinate arrays, or a :class:`FisherWeights`. ``psi="L2"``
    charges ``w * (now - prev)**2`` per coordinate; ``"L1"`` charges
    ``w * |now - prev|``.
    """
    if lam < 0:
        raise PenaltyConfigError("lambda must be >= 0")
    if isinstance(weights, FisherWeights):
        ew, rw = weights.entity, weights.relation
    elif weights is None:
        ew = rw = None
    else:
        ew, rw = weights
    value = 0.0
    parts = []
    for which, w in (("entity", ew), ("relation", rw)):
        prev = emb_prev.matrix(which)
        n, width = prev.shape
        if emb_now.matrix(which).shape[0] < n:
            raise PenaltyConfigError(f"current store has fewer {which} rows than the anchor")
        diff = emb_now.matrix(which)[:n, :width] - prev
        wm = _row_weights(w, n, width, which)
        if psi == "L2":
            value += lam * float((wm * diff * diff).sum())
            g = 2.0 * lam * wm * diff
        elif psi == "L1":
            value += lam * float((wm * np.abs(diff)).sum())
            g = lam * wm * np.sign(diff)
        else:
            raise PenaltyConfigError(f"unknown penalty norm {psi!r}")
        full = np.zeros((n, emb_now.matrix(which).shape[1]))
        full[:, :width] = g
        parts.append((np.arange(n), full))
    (er, eg), (rr, rg) = parts
    return value, SparseGrad(er, eg, rr, rg)


class AnchorPenalty:
    """:func:`reg_term` as a callable penalty that also offers a proximal step.

    Under plain SGD a stiff anchor (``2 * lr * lam * w > 1``) makes the explicit
    gradient step overshoot and diverge. The trainer instead applies
    :meth:`prox`, the exact minimizer of ``lr * penalty + 0.5 * ||x - y||^2``,
    which is stable for any ``lam`` and agrees with the gradient step to first
    order in ``lr``.
    """

    def __init__(self, anchor: EmbeddingStore, weights=None, psi="L2", lam=1.0):
        if psi not in ("L1", "L2"):
            raise PenaltyConfigError(f"unknown penalty norm {psi!r}")
        self.anchor, self.weights, self.psi, self.lam = anchor, weights, psi, lam

    def __call__(self, emb):
        return reg_term(emb, self.anchor, self.weights, self.psi, self.lam)

    def value(self, emb):
        return self(emb)[0]

    def prox(self, emb: EmbeddingStore, lr: float, update_mask=None):
        w = self.weights
        if isinstance(w, FisherWeights):
            ew, rw = w.entity, w.relation
        elif w is None:
            ew = rw = None
        else:
            ew, rw = w
        for which, wt in (("entity", ew), ("relation", rw)):
            prev = self.anchor.matrix(which)
            n, width = prev.shape
            mat = emb.matrix(which)
            cur = mat[:n, :width]
            diff = cur - prev
            wm = _row_weights(wt, n, width, which)
            if self.psi == "L2":
                new = prev + diff / (1.0 + 2.0 * lr * self.lam * wm)
            else:
                new = prev + np.sign(diff) * np.maximum(np.abs(diff) - lr * self.lam * wm, 0.0)
            m = None if update_mask is None else getattr(update_mask, which)
            if m is not None:
                frozen = m[:n, None] if m.ndim == 1 else m[:n, :width]
                new = np.where(frozen, cur, new)
            mat[:n, :width] = new


def frequency_weights(triples, n_entities, n_relations):
    """Per-row count of (old and new) training triples that contain each id."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ne = max(n_entities, int(t[:, [0, 2]].max()) + 1 if len(t) else 0)
    nr = max(n_relations, int(t[:, 1].max()) + 1 if len(t) else 0)
    ew = np.bincount(t[:, 0], minlength=ne) + np.bincount(t[:, 2], minlength=ne)
    rw = np.bincount(t[:, 1], minlength=nr)
    return ew[:n_entities].astype(np.float64), rw[:n_relations].astype(np.float64)


def reconstruction_term(emb: EmbeddingStore, triples, mode: str = "transe-structural", lam: float = 1.0,
                        n_rows: Optional[int] = None, n_relation_rows: Optional[int] = None):
    """Penalty ``lam * sum ||e - e~||^2`` with ``e~`` rebuilt from incident triples.

    ``transe-structural``: ``e~`` averages ``h + r`` over triples where ``e`` is the
    tail and ``t - r`` where it is the head. ``neighbor-mean``: ``e~`` averages
    the neighbouring entity rows, and relations get ``r~`` = mean of ``t - h``.
    Only ids below ``n_rows``/``n_relation_rows`` (default: all) are penalized;
    gradients flow into every row the reconstruction reads.
    """
    if mode not in ("transe-structural", "neighbor-mean"):
        raise PenaltyConfigError(f"unknown reconstruction mode {mode!r}")
    t3 = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E, R = emb.entity, emb.relation
    if mode == "transe-structural" and E.shape[1] != R.shape[1]:
        raise PenaltyConfigError("transe-structural reconstruction needs equal entity/relation widths")
    n_rows = E.shape[0] if n_rows is None else n_rows
    n_relation_rows = R.shape[0] if n_relation_rows is None else n_relation_rows
    h, r, t = t3.T
    # each incidence: (target entity, list of (sign, matrix, row) terms)
    if mode == "transe-structural":
        targets = np.concatenate([t, h])
        terms = [
            (np.concatenate([h, t]), np.ones(2 * len(h)), "entity"),
            (np.concatenate([r, r]), np.concatenate([np.ones(len(h)), -np.ones(len(h))]), "relation"),
        ]
    else:
        targets = np.concatenate([t, h])
        terms = [(np.concatenate([h, t]), np.ones(2 * len(h)), "entity")]
    keep = targets < n_rows
    targets = targets[keep]
    terms = [(rows[keep], sign[keep], which) for rows, sign, which in terms]
    cnt = np.bincount(targets, minlength=E.shape[0]).astype(np.float64)
    acc = np.zeros_like(E)
    for rows, sign, which in terms:
        np.add.at(acc, targets, sign[:, None] * emb.matrix(which)[rows])
    has = cnt > 0
    res = np.zeros_like(E)
    res[has] = E[has] - acc[has] / cnt[has, None]
    value = lam * float((res * res).sum())
    g_rows_e = [np.nonzero(has)[0]]
    g_vals_e = [2.0 * lam * res[has]]
    g_rows_r, g_vals_r = [], []
    coef = -2.0 * lam * res[targets] / cnt[targets, None]
    for rows, sign, which in terms:
        (g_rows_e if which == "entity" else g_rows_r).append(rows)
        (g_vals_e if which == "entity" else g_vals_r).append(sign[:, None] * coef)
    if mode == "neighbor-mean":
        sel = r < n_relation_rows
        rr, hh, tt = r[sel], h[sel], t[sel]
        rcnt = np.bincount(rr, minlength=R.shape[0]).astype(np.float64)
        racc = np.zeros_like(R)
        np.add.at(racc, rr, E[tt] - E[hh])
        rhas = rcnt > 0
        rres = np.zeros_like(R)
        rres[rhas] = R[rhas] - racc[rhas] / rcnt[rhas, None]
        value += lam * float((rres * rres).sum())
        g_rows_r.append(np.nonzero(rhas)[0])
        g_vals_r.append(2.0 * lam * rres[rhas])
        rcoef = -2.0 * lam * rres[rr] / rcnt[rr, None]
        g_rows_e += [tt, hh]
        g_vals_e += [rcoef, -rcoef]
    grad = SparseGrad.build(
        np.concatenate(g_rows_e), np.vstack(g_vals_e),
        np.concatenate(g_rows_r) if g_rows_r else np.zeros(0, np.int64),
        np.vstack(g_vals_r) if g_vals_r else np.zeros((0, R.shape[1])),
        E.shape[0], R.shape[0],
    )
    return value, grad


def align_term(emb_now: EmbeddingStore, emb_prev: EmbeddingStore, lam: float = 1.0, stats: Optional[dict] = None):
    """``lam * sum (1 - cos(now, prev))`` over previously existing rows.

    Rows where either vector has norm below 1e-12 contribute nothing and are
    counted in ``stats["degenerate_rows"]`` when a dict is passed.
    """
    value = 0.0
    degenerate = 0
    parts = []
    for which in ("entity", "relation"):
        prev = emb_prev.matrix(which)
        n, width = prev.shape
        now = emb_now.matrix(which)[:n, :width]
        nn = np.linalg.norm(now, axis=1)
        pn = np.linalg.norm(prev, axis=1)
        ok = (nn >= _DEGENERATE) & (pn >= _DEGENERATE)
        degenerate += int((~ok).sum())
        cos = np.zeros(n)
        cos[ok] = (now[ok] * prev[ok]).sum(axis=1) / (nn[ok] * pn[ok])
        value += lam * float((1.0 - cos[ok]).sum())
        g = np.zeros((n, emb_now.matrix(which).shape[1]))
        # d cos / d now = prev / (|now||prev|) - cos * now / |now|^2
        g[ok, :width] = -lam * (prev[ok] / (nn[ok] * pn[ok])[:, None] - (cos[ok] / nn[ok] ** 2)[:, None] * now[ok])
        parts.append((np.arange(n), g))
    if stats is not None:
        stats["degenerate_rows"] = stats.get("degenerate_rows", 0) + degenerate
    (er, eg), (rr, rg) = parts
    return value, SparseGrad(er, eg, rr, rg)


def ewc_fisher_diag(model: ScoreModel, emb: EmbeddingStore, triples, n_samples: int, rng,
                    filter_index=None) -> FisherWeights:
    """Mean of squared per-sample gradients of the base loss.

    A sample is one training triple (drawn without replacement) with ``k`` fresh
    negatives; its gradient is summed over every slot touching a row before
    squaring.
    """
    if n_samples < 1:
        raise PenaltyConfigError("n_samples must be >= 1")
    t3 = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if filter_index is None:
        from ..kgstore import FilterIndex

        filter_index = FilterIndex(t3, emb.n_entities, emb.n_relations)
    m = min(n_samples, len(t3))
    pick = t3[rng.choice(len(t3), size=m, replace=False)] if m < len(t3) else t3
    neg = negative_sample(pick, emb.n_entities, model.negatives, filter_index, rng)
    _, h, r, t, gh, gr, gt = _slot_grads(model, emb, pick, neg)
    sample = np.repeat(np.arange(m), model.negatives + 1)
    fe = _per_sample_sq(np.concatenate([sample, sample]), np.concatenate([h, t]), np.vstack([gh, gt]),
                        emb.n_entities) / m
    fr = _per_sample_sq(sample, r, gr, emb.n_relations) / m
    return FisherWeights(fe, fr)


def _per_sample_sq(sample, rows, vals, n_rows):
    key = sample * n_rows + rows
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.zeros((uniq.size, vals.shape[1]))
    np.add.at(summed, inv, vals)
    out = np.zeros((n_rows, vals.shape[1]))
    np.add.at(out, uniq % n_rows, summed * summed)
    return out
