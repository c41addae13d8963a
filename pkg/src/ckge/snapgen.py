"""Synthetic growing-KG snapshot sequences cut from one base triple set.

Every scenario starts from a breadth-first ranking of the entities in the base
graph's largest connected component (random root). How the deltas are cut
depends on which resource is rationed:

* ``entity-growth``: entity ranks are split into equal chunks; a triple joins
  the snapshot of its later-ranked endpoint.
* ``equal-size`` / ``increasing-size`` / ``decreasing-size``: triples sorted by
  their later-ranked endpoint are cut into chunks of the requested sizes.
* ``fact-growth``: snapshot 0 holds a spanning tree plus one triple per
  relation, so every entity is known from the start; the other triples are
  dealt out at random.
* ``relation-growth``: relations are released in equal random groups; each
  snapshot takes every unused triple over released relations that is reachable
  from the entities known so far.
* ``hybrid``: entity and relation allowances advance on alternate snapshots
  and both reach 100% at the last one.

Within each delta the train/valid/test split is uniform at random, except that
every entity or relation born in the delta keeps one of its triples in train.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kgstore import KGError, SnapshotSequence, sequence_from_named

log = logging.getLogger(__name__)

KINDS = ("entity-growth", "relation-growth", "fact-growth", "hybrid", "equal-size", "increasing-size",
         "decreasing-size")
MIN_TRIPLES_PER_SNAPSHOT = 5
MIN_COMPONENT_SHARE = 0.9


class GenerationError(KGError):
    pass


class InfeasibleScenario(GenerationError):
    pass


@dataclass(frozen=True)
class GrowthScenario:
    kind: str
    n_snapshots: int = 5
    seed: int = 0
    test_fraction: float = 0.1
    valid_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.n_snapshots < 2:
            raise ValueError("n_snapshots must be >= 2")
        if not (0 < self.test_fraction < 1 and 0 < self.valid_fraction < 1):
            raise ValueError("split fractions must lie in (0, 1)")
        if self.test_fraction + self.valid_fraction >= 1:
            raise ValueError("test_fraction + valid_fraction must be < 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _encode(base_triples):
    rows = [tuple(map(str, t)) for t in base_triples]
    if not rows:
        raise GenerationError("base graph is empty")
    arr = np.array(rows, dtype=object)
    ent_names, ent_inv = np.unique(np.concatenate([arr[:, 0], arr[:, 2]]).astype(str), return_inverse=True)
    rel_names, rel_inv = np.unique(arr[:, 1].astype(str), return_inverse=True)
    n = len(rows)
    ids = np.stack([ent_inv[:n], rel_inv, ent_inv[n:]], axis=1).astype(np.int64)
    ids = np.unique(ids, axis=0)
    return ids, list(ent_names), list(rel_names)


def _components(n, h, t):
    parent = np.arange(n)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in zip(h.tolist(), t.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(x) for x in range(n)])


def _bfs_rank(n, h, t, root):
    """Position of each entity in breadth-first order from ``root`` (n for unreached)."""
    adj_src = np.concatenate([h, t])
    adj_dst = np.concatenate([t, h])
    order = np.lexsort((adj_dst, adj_src))
    adj_src, adj_dst = adj_src[order], adj_dst[order]
    ptr = np.searchsorted(adj_src, np.arange(n + 1))
    rank = np.full(n, n, dtype=np.int64)
    rank[root] = 0
    queue = [root]
    head = 0
    nxt = 1
    while head < len(queue):
        v = queue[head]
        head += 1
        for w in adj_dst[ptr[v] : ptr[v + 1]].tolist():
            if rank[w] == n:
                rank[w] = nxt
                nxt += 1
                queue.append(w)
    return rank


def _chunk_sizes(total, weights):
    w = np.asarray(weights, dtype=np.float64)
    edges = np.floor(np.cumsum(w) / w.sum() * total + 1e-9).astype(np.int64)
    edges[-1] = total
    return np.diff(np.concatenate([[0], edges]))


def _grow_reachable(triples, allowed, used, known):
    """Take every allowed unused triple reachable from ``known`` through allowed triples."""
    take = np.zeros(len(triples), dtype=bool)
    h, t = triples[:, 0], triples[:, 2]
    pool = allowed & ~used
    while True:
        sel = pool & ~take & (known[h] | known[t])
        if not sel.any():
            return take
        take |= sel
        known[h[sel]] = True
        known[t[sel]] = True


def _assign_by_allowance(triples, ent_rank, rel_group, e_allow, r_allow, root, n_ent):
    """Snapshot index per triple for the rationed-growth kinds."""
    key = np.maximum(ent_rank[triples[:, 0]], ent_rank[triples[:, 2]])
    snap = np.full(len(triples), -1, dtype=np.int64)
    used = np.zeros(len(triples), dtype=bool)
    known = np.zeros(n_ent, dtype=bool)
    known[root] = True
    for i, (ea, ra) in enumerate(zip(e_allow, r_allow)):
        allowed = (key < ea) & (rel_group[triples[:, 1]] < ra)
        take = _grow_reachable(triples, allowed, used, known)
        if not take.any():
            raise InfeasibleScenario(f"snapshot {i} would receive no triples")
        snap[take] = i
        used |= take
    if (snap < 0).any():
        raise GenerationError("some component triples were never reached")
    return snap


def _split_delta(delta, born_e, born_r, sc, rng):
    """(train, valid, test) index arrays into ``delta``; newborn ids keep a train triple."""
    m = len(delta)
    perm = rng.permutation(m)
    need_e, need_r = set(born_e.tolist()), set(born_r.tolist())
    forced = np.zeros(m, dtype=bool)
    if need_e or need_r:
        for k in perm.tolist():
            h, r, t = delta[k].tolist()
            if h in need_e or t in need_e or r in need_r:
                forced[k] = True
                need_e.discard(h)
                need_e.discard(t)
                need_r.discard(r)
                if not need_e and not need_r:
                    break
    free = perm[~forced[perm]]
    n_test = min(int(round(sc.test_fraction * m)), len(free))
    n_valid = min(int(round(sc.valid_fraction * m)), len(free) - n_test)
    test = free[:n_test]
    valid = free[n_test : n_test + n_valid]
    train = np.concatenate([free[n_test + n_valid :], np.nonzero(forced)[0]])
    return np.sort(train), np.sort(valid), np.sort(test)


def generate_snapshots(base_triples: Sequence, scenario: GrowthScenario) -> SnapshotSequence:
    """Cut ``base_triples`` (name triples) into a snapshot sequence of the requested shape."""
    sc = scenario
    n = sc.n_snapshots
    triples, ent_names, rel_names = _encode(base_triples)
    if len(triples) < MIN_TRIPLES_PER_SNAPSHOT * n:
        raise GenerationError(
            f"base graph has {len(triples)} distinct triples; need at least {MIN_TRIPLES_PER_SNAPSHOT * n} "
            f"for {n} snapshots"
        )
    n_ent, n_rel = len(ent_names), len(rel_names)
    if sc.kind == "relation-growth" and n_rel < n:
        raise InfeasibleScenario(f"relation-growth needs at least {n} relations, base graph has {n_rel}")
    if sc.kind == "hybrid" and n_rel < (n + 1) // 2 + 1:
        raise InfeasibleScenario(f"hybrid growth over {n} snapshots needs more than {n_rel} relations")
    comp = _components(n_ent, triples[:, 0], triples[:, 2])
    labels, counts = np.unique(comp, return_counts=True)
    main = labels[np.argmax(counts)]
    if counts.max() < MIN_COMPONENT_SHARE * n_ent:
        raise GenerationError(
            f"largest connected component covers {counts.max()}/{n_ent} entities (< {MIN_COMPONENT_SHARE:.0%})"
        )
    keep = comp[triples[:, 0]] == main
    if not keep.all():
        log.info("dropping %d triples outside the main component", int((~keep).sum()))
    triples = triples[keep]
    rng = np.random.default_rng(sc.seed)
    members = np.nonzero(comp == main)[0]
    root = int(members[rng.integers(members.size)])
    rank = _bfs_rank(n_ent, triples[:, 0], triples[:, 2], root)
    n_comp = members.size
    key = np.maximum(rank[triples[:, 0]], rank[triples[:, 2]])
    tie = rng.random(len(triples))
    selfloop = triples[:, 0] == triples[:, 2]
    by_key = np.lexsort((tie, selfloop, key))
    snap = np.empty(len(triples), dtype=np.int64)

    if sc.kind == "entity-growth":
        if n_comp < n:
            raise InfeasibleScenario(f"entity-growth over {n} snapshots needs at least {n} entities")
        bounds = np.cumsum(_chunk_sizes(n_comp, np.ones(n)))
        snap[:] = np.searchsorted(bounds, key, side="right")
    elif sc.kind in ("equal-size", "increasing-size", "decreasing-size"):
        w = {"equal-size": np.ones(n), "increasing-size": 2.0 ** np.arange(n),
             "decreasing-size": 2.0 ** np.arange(n)[::-1]}[sc.kind]
        sizes = _chunk_sizes(len(triples), w)
        if (sizes == 0).any():
            raise InfeasibleScenario("base graph too small for the requested size profile")
        snap[by_key] = np.repeat(np.arange(n), sizes)
    elif sc.kind == "fact-growth":
        first = np.zeros(len(triples), dtype=bool)
        # the earliest triple of each key links that entity to an earlier one
        k_sorted = key[by_key]
        first[by_key[np.r_[True, k_sorted[1:] != k_sorted[:-1]]]] = True
        rel_first = np.unique(triples[:, 1], return_index=True)[1]
        first[rel_first] = True
        rest = np.nonzero(~first)[0]
        rest = rest[rng.permutation(rest.size)]
        want0 = max(0, int(round(len(triples) / n)) - int(first.sum()))
        sizes = _chunk_sizes(rest.size - min(want0, rest.size), np.ones(n - 1))
        if rest.size - min(want0, rest.size) < n - 1 or (sizes == 0).any():
            raise InfeasibleScenario("not enough triples beyond the spanning tree for fact growth")
        snap[first] = 0
        snap[rest[:want0]] = 0
        snap[rest[want0:]] = 1 + np.repeat(np.arange(n - 1), sizes)
    else:
        rel_perm = rng.permutation(n_rel)
        if sc.kind == "relation-growth":
            groups = n
            e_allow = [n_ent + 1] * n
            r_allow = list(range(1, n + 1))
        else:
            steps_e = [i for i in range(1, n) if i % 2 == 0]
            steps_r = [i for i in range(1, n) if i % 2 == 1]
            ne, nr = len(steps_e) + 1, len(steps_r) + 1
            ecount = [1 + sum(1 for s in steps_e if s <= i) for i in range(n)]
            rcount = [1 + sum(1 for s in steps_r if s <= i) for i in range(n)]
            groups = nr
            bounds = np.cumsum(_chunk_sizes(n_comp, np.ones(ne)))
            e_allow = [int(bounds[c - 1]) for c in ecount]
            r_allow = rcount
        gsize = np.cumsum(_chunk_sizes(n_rel, np.ones(groups)))
        group_of = np.empty(n_rel, dtype=np.int64)
        group_of[rel_perm] = np.searchsorted(gsize, np.arange(n_rel), side="right")
        snap[:] = _assign_by_allowance(triples, rank, group_of, e_allow, r_allow, root, n_ent)

    named = []
    known_e = np.zeros(n_ent, dtype=bool)
    known_r = np.zeros(n_rel, dtype=bool)
    for i in range(n):
        delta = triples[snap == i]
        if len(delta) == 0:
            raise InfeasibleScenario(f"snapshot {i} would receive no triples")
        ents = np.union1d(delta[:, 0], delta[:, 2])
        born_e = ents[~known_e[ents]]
        rels = np.unique(delta[:, 1])
        born_r = rels[~known_r[rels]]
        known_e[ents] = True
        known_r[rels] = True
        tr, va, te = _split_delta(delta, born_e, born_r, sc, rng)
        named.append({
            name: [(ent_names[h], rel_names[r], ent_names[t]) for h, r, t in delta[idx].tolist()]
            for name, idx in (("train", tr), ("valid", va), ("test", te))
        })
    return sequence_from_named(named)


# ------------------------------------------------------------------ validation

@dataclass
class ValidationReport:
    passed: bool
    failures: list = field(default_factory=list)
    delta_entities: list = field(default_factory=list)
    delta_relations: list = field(default_factory=list)
    delta_triples: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed, "failures": list(self.failures),
            "delta_entities": list(self.delta_entities), "delta_relations": list(self.delta_relations),
            "delta_triples": list(self.delta_triples),
        }


def validate_cumulative(snapshots: Sequence) -> ValidationReport:
    """Containment check over cumulative snapshots given as collections of name triples."""
    sets = [set(map(tuple, s)) for s in snapshots]
    failures = []
    for i in range(1, len(sets)):
        missing = sets[i - 1] - sets[i]
        if missing:
            failures.append(f"containment: snapshot {i} lacks {len(missing)} triple(s) of snapshot {i - 1}, "
                            f"e.g. {sorted(missing)[0]}")
    ents = [{x for h, _, t in s for x in (h, t)} for s in sets]
    rels = [{r for _, r, _ in s} for s in sets]
    prev_e, prev_r, prev_s = set(), set(), set()
    de, dr, ds = [], [], []
    for e, r, s in zip(ents, rels, sets):
        de.append(len(e - prev_e))
        dr.append(len(r - prev_r))
        ds.append(len(s - prev_s))
        prev_e, prev_r, prev_s = e, r, s
    return ValidationReport(not failures, failures, de, dr, ds)


def _unreachable(triples, known):
    known = known.copy()
    allowed = np.ones(len(triples), dtype=bool)
    take = _grow_reachable(triples, allowed, np.zeros(len(triples), dtype=bool), known)
    return int((~take).sum())


def validate_sequence(seq, scenario: GrowthScenario | None = None) -> ValidationReport:
    """Containment, per-snapshot delta sizes and the scenario's shape constraints.

    ``seq`` is a :class:`SnapshotSequence` or a list of cumulative snapshots
    (each a collection of name triples).
    """
    if not isinstance(seq, SnapshotSequence):
        rep = validate_cumulative(seq)
        if not rep.passed:
            return rep
        prev: set = set()
        named = []
        for s in seq:
            delta = sorted(set(map(tuple, s)) - prev)
            prev = set(map(tuple, s))
            named.append({"train": delta, "valid": [], "test": []})
        try:
            seq = sequence_from_named(named)
        except KGError as e:
            return ValidationReport(False, [str(e)], rep.delta_entities, rep.delta_relations, rep.delta_triples)
    n = seq.n_snapshots
    de = [seq.n_entities(i) - (seq.n_entities(i - 1) if i else 0) for i in range(n)]
    dr = [seq.n_relations(i) - (seq.n_relations(i - 1) if i else 0) for i in range(n)]
    ds = [len(s.all_triples()) for s in seq.snapshots]
    failures = []
    for i in range(1, n):
        known = np.zeros(seq.vocab.n_entities, dtype=bool)
        known[: seq.n_entities(i - 1)] = True
        lost = _unreachable(seq.snapshots[i].all_triples(), known)
        if lost:
            failures.append(f"snapshot {i}: {lost} new triple(s) unreachable from earlier entities")
    if any(x == 0 for x in ds):
        failures.append("a snapshot has no new triples")
    if scenario is not None:
        if scenario.n_snapshots != n:
            failures.append(f"expected {scenario.n_snapshots} snapshots, found {n}")
        failures += _shape_failures(scenario.kind, de, dr, ds, seq)
    return ValidationReport(not failures, failures, de, dr, ds)


def _shape_failures(kind, de, dr, ds, seq):
    out = []
    n = len(ds)
    nE, nR = seq.vocab.n_entities, seq.vocab.n_relations
    if kind == "entity-growth":
        if any(x <= 0 for x in de):
            out.append(f"entity count must strictly increase, deltas {de}")
        if nR - seq.n_relations(0) > max(2, 0.1 * nR):
            out.append(f"relation count should stay near constant ({seq.n_relations(0)} -> {nR})")
    elif kind == "relation-growth":
        if any(x <= 0 for x in dr):
            out.append(f"relation count must strictly increase, deltas {dr}")
    elif kind == "fact-growth":
        if nE - seq.n_entities(0) >= 0.1 * seq.n_entities(0):
            out.append(f"entity growth {seq.n_entities(0)} -> {nE} is not minimal")
        if nR - seq.n_relations(0) >= max(1, 0.1 * seq.n_relations(0)):
            out.append(f"relation growth {seq.n_relations(0)} -> {nR} is not minimal")
    elif kind == "hybrid":
        if nE <= seq.n_entities(0) or nR <= seq.n_relations(0):
            out.append("hybrid growth must add both entities and relations")
    elif kind == "equal-size":
        mean = sum(ds) / n
        if any(abs(x - mean) > 0.05 * mean for x in ds):
            out.append(f"delta sizes {ds} deviate more than 5% from {mean:.1f}")
    elif kind in ("increasing-size", "decreasing-size"):
        lo, hi = (1.5, 2.5) if kind == "increasing-size" else (0.4, 2 / 3)
        ratios = [b / a for a, b in zip(ds, ds[1:])]
        if any(not lo <= q <= hi for q in ratios):
            out.append(f"successive size ratios {[round(q, 3) for q in ratios]} outside [{lo}, {hi:.3g}]")
    return out
