"""Split lost predictions into representation drift and new-entity interference."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..kgstore import SnapshotSequence, build_filter_index
from .metrics import (
    MetricDomainError,
    ThetaResult,
    aggregate_final,
    bwt,
    cf,
    omega_new,
)
from .ranking import QueryRanks, rank_testset

CLASSES = ("still-correct", "drift-forgotten", "interference-forgotten", "both")


@dataclass
class Decomposition:
    source_snapshot: int
    final_snapshot: int
    counts: dict
    originally_correct: int

    def check(self):
        assert sum(self.counts.values()) == self.originally_correct


def classify(at_source: QueryRanks, at_final: QueryRanks) -> dict:
    """Count classes over the queries ranked first at the source checkpoint.

    Both arguments must rank the same test set in the same query order; the
    final ranks are split at the source snapshot's entity count.
    """
    if len(at_source) != len(at_final):
        raise ValueError("source and final rankings cover different queries")
    correct = at_source.rank_local == 1
    drift = at_final.rank_local > 1
    interf = at_final.interfering > 0
    return {
        "still-correct": int((correct & ~drift & ~interf).sum()),
        "drift-forgotten": int((correct & drift & ~interf).sum()),
        "interference-forgotten": int((correct & ~drift & interf).sum()),
        "both": int((correct & drift & interf).sum()),
    }


def decompose_forgetting(model, checkpoints, seq: SnapshotSequence, source: int,
                         final: Optional[int] = None, theta: Optional[ThetaResult] = None) -> Decomposition:
    """Classify every test query of snapshot ``source`` that was ranked first right after training it.

    At the final checkpoint a query is drift-forgotten when an old entity now
    outranks the truth, interference-forgotten when only new entities do, and
    ``both`` when each kind of competitor does.
    """
    final = len(checkpoints) - 1 if final is None else final
    if not 0 <= source <= final < len(checkpoints):
        raise MetricDomainError(f"need checkpoints for snapshots {source} and {final}")
    for j in (source, final):
        if checkpoints[j] is None:
            raise MetricDomainError(f"missing checkpoint for snapshot {j}")

    def ranks(j):
        if theta is not None and (j, source) in theta.ranks:
            return theta.ranks[(j, source)]
        return rank_testset(model, checkpoints[j], seq.snapshots[source].test, seq.n_entities(source),
                            seq.n_entities(j), build_filter_index(seq, j))

    a, b = ranks(source), ranks(final)
    counts = classify(a, b)
    return Decomposition(source, final, counts, int((a.rank_local == 1).sum()))


@dataclass
class ForgettingReport:
    BWT: Optional[float]
    CF: Optional[float]
    Omega_new: Optional[float]
    aggregates: dict
    classification: dict
    per_source: list = field(default_factory=list)
    legacy: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _safe(fn, theta):
    try:
        return fn(theta)
    except MetricDomainError:
        return None


def build_report(model, checkpoints, seq: SnapshotSequence, theta: ThetaResult) -> ForgettingReport:
    """Forgetting metrics from corrected MRR, plus legacy counterparts and the drift/interference breakdown."""
    cor = theta.get("MRR", "current")
    leg = theta.get("MRR", "snapshot-local")
    N = cor.N
    aggregates = {
        "MRR_0_0": float(cor.values[0, 0]),
        "MRR_wo_N_0": float(leg.values[N, 0]),
        "MRR_N_0": float(cor.values[N, 0]),
        "MRR_wo_final": aggregate_final(leg),
        "MRR_final": aggregate_final(cor),
    }
    per_source = []
    total = {k: 0 for k in ("still-correct", "drift-forgotten", "interference-forgotten", "both")}
    for i in range(N):
        d = decompose_forgetting(model, checkpoints, seq, i, N, theta)
        per_source.append({"source_snapshot": i, "originally_correct": d.originally_correct, **d.counts})
        for k in total:
            total[k] += d.counts[k]
    classification = dict(total, originally_correct=sum(p["originally_correct"] for p in per_source))
    notes = [
        "'both' counts queries outranked by an old and a new entity at once; drift and interference overlap there",
    ]
    for i in range(N + 1):
        if cor.values[i, i] == 0:
            notes.append(f"theta[{i}][{i}] is zero, CF undefined")
    return ForgettingReport(
        BWT=_safe(bwt, cor), CF=_safe(cf, cor), Omega_new=_safe(omega_new, cor),
        aggregates=aggregates, classification=classification, per_source=per_source,
        legacy={"BWT": _safe(bwt, leg), "CF": _safe(cf, leg), "Omega_new": _safe(omega_new, leg)},
        notes=notes,
    )
