"""The theta matrix and the forgetting metrics computed from it."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..kgstore import SnapshotSequence, build_filter_index
from .ranking import QueryRanks, metrics_from_ranks, policy_kind, rank_testset

METRICS = ("MRR", "Hits@1", "Hits@3", "Hits@10")
POLICIES = ("snapshot-local", "current")


class MetricDomainError(ValueError):
    pass


@dataclass
class MetricMatrix:
    """``values[j, i]``: metric on test set ``i`` after training snapshot ``j`` (NaN for ``j < i``)."""

    values: np.ndarray
    metric: str
    policy: str
    sizes: np.ndarray  # test triples per snapshot; each yields two queries

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        n = self.values.shape[0]
        if self.values.shape != (n, n) or self.sizes.shape != (n,):
            raise ValueError("theta must be square with one size per test set")

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    def __getitem__(self, ji):
        j, i = ji
        if i > j:
            raise IndexError("theta is defined only for j >= i")
        return float(self.values[j, i])

    def check_complete(self):
        low = self.values[np.tril_indices(self.N + 1)]
        if np.isnan(low).any():
            raise MetricDomainError("theta has missing cells")


def empty_matrix(n, metric, policy, sizes) -> MetricMatrix:
    v = np.full((n, n), np.nan)
    return MetricMatrix(v, metric, policy, sizes)


@dataclass
class ThetaResult:
    """All metrics under both policies, plus the raw per-query ranks for each cell."""

    matrices: dict  # (policy, metric) -> MetricMatrix
    ranks: dict = field(default_factory=dict)  # (j, i) -> QueryRanks

    def get(self, metric="MRR", policy="current") -> MetricMatrix:
        return self.matrices[(policy_kind(policy), metric)]


def compute_theta(model, checkpoints, seq: SnapshotSequence, threads: int = 1, keep_ranks: bool = True,
                  upto: Optional[int] = None) -> ThetaResult:
    """Evaluate every cell ``j >= i`` under both candidate policies in one pass per cell.

    The filter at checkpoint ``j`` holds all splits of snapshots ``0..j``.
    """
    N = (len(checkpoints) - 1) if upto is None else upto
    if N < 0 or len(checkpoints) < N + 1:
        raise MetricDomainError(f"need checkpoints for snapshots 0..{N}, have {len(checkpoints)}")
    if N > seq.last:
        raise MetricDomainError("more checkpoints than snapshots")
    sizes = np.array([len(seq.snapshots[i].test) for i in range(N + 1)])
    filters = [build_filter_index(seq, j) for j in range(N + 1)]
    cells = [(j, i) for j in range(N + 1) for i in range(j + 1)]

    def one(cell):
        j, i = cell
        emb = checkpoints[j]
        if emb is None:
            raise MetricDomainError(f"missing checkpoint for snapshot {j}")
        return rank_testset(model, emb, seq.snapshots[i].test, seq.n_entities(i), seq.n_entities(j), filters[j])

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, cells))
    else:
        results = [one(c) for c in cells]
    mats = {(p, m): empty_matrix(N + 1, m, p, sizes) for p in POLICIES for m in METRICS}
    ranks = {}
    for (j, i), q in zip(cells, results):
        for p in POLICIES:
            for m, v in metrics_from_ranks(q.ranks(p)).items():
                mats[(p, m)].values[j, i] = v
        if keep_ranks:
            ranks[(j, i)] = q
    return ThetaResult(mats, ranks)


def theta_matrix(model, checkpoints, seq, metric="MRR", policy="current", threads=1) -> MetricMatrix:
    return compute_theta(model, checkpoints, seq, threads, keep_ranks=False).get(metric, policy)


def aggregate_final(theta: MetricMatrix) -> float:
    """Size-weighted mean of the last row."""
    theta.check_complete()
    w = theta.sizes.astype(np.float64)
    return float((theta.values[theta.N] * w).sum() / w.sum())


def aggregate_row(theta: MetricMatrix, j: int) -> float:
    w = theta.sizes[: j + 1].astype(np.float64)
    return float((theta.values[j, : j + 1] * w).sum() / w.sum())


def bwt(theta: MetricMatrix) -> float:
    """Mean change on past test sets: ``sum_{i<N}(th[N,i] - th[i,i]) / (N - 1)``."""
    N = theta.N
    if N < 2:
        raise MetricDomainError(f"backward transfer needs at least 3 snapshots (N >= 2), got N={N}")
    theta.check_complete()
    v = theta.values
    return float(sum(v[N, i] - v[i, i] for i in range(N)) / (N - 1))


def cf(theta: MetricMatrix) -> float:
    """Relative change per elapsed step, weighted by past test-set size."""
    N = theta.N
    if N < 1:
        raise MetricDomainError("forgetting needs at least two snapshots")
    theta.check_complete()
    v = theta.values
    past = float(theta.sizes[:N].sum())
    if past == 0:
        raise MetricDomainError("past test sets are empty")
    total = 0.0
    for i in range(N):
        if v[i, i] == 0:
            raise MetricDomainError(f"theta[{i}][{i}] is zero, relative forgetting undefined for snapshot {i}")
        total += (v[N, i] - v[i, i]) / ((N - i) * v[i, i]) * (theta.sizes[i] / past)
    return float(total)


def omega_new(theta: MetricMatrix) -> float:
    N = theta.N
    if N < 1:
        raise MetricDomainError("needs at least two snapshots")
    return float(np.mean([theta.values[i, i] for i in range(1, N + 1)]))
