"""Growing knowledge-graph snapshot sequences.

A sequence is stored as per-snapshot *deltas* (the triples that first appear at
that snapshot) together with a vocabulary whose ids are assigned in birth
order, so the entities known at snapshot ``i`` are always the id prefix
``range(n_entities(i))``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")


class KGError(Exception):
    """Base class for snapshot loading and validation errors."""


class ParseError(KGError):
    pass


class ValidationError(KGError):
    pass


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass
class Vocab:
    entity_names: list[str]
    relation_names: list[str]
    entity_birth: np.ndarray
    relation_birth: np.ndarray

    def __post_init__(self):
        self.entity_birth = np.asarray(self.entity_birth, dtype=np.int64)
        self.relation_birth = np.asarray(self.relation_birth, dtype=np.int64)
        self.entity_index = {n: i for i, n in enumerate(self.entity_names)}
        self.relation_index = {n: i for i, n in enumerate(self.relation_names)}
        if len(self.entity_index) != len(self.entity_names):
            raise ValidationError("entity names are not unique")
        if len(self.relation_index) != len(self.relation_names):
            raise ValidationError("relation names are not unique")
        for kind, birth in (("entity", self.entity_birth), ("relation", self.relation_birth)):
            if birth.size and np.any(np.diff(birth) < 0):
                raise ValidationError(f"{kind} ids are not assigned in snapshot order")

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)


@dataclass
class Snapshot:
    """Delta splits of one snapshot, each an ``(n, 3)`` int64 array of ids."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def split(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


@dataclass
class DeltaView:
    train: np.ndarray
    test: np.ndarray
    entities: range
    relations: range


def _as_triples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass
class SnapshotSequence:
    snapshots: list[Snapshot]
    vocab: Vocab
    _entity_counts: np.ndarray = field(init=False, repr=False)
    _relation_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for s in self.snapshots:
            s.train, s.valid, s.test = (_as_triples(s.train), _as_triples(s.valid), _as_triples(s.test))
        n = len(self.snapshots)
        if n == 0:
            raise ValidationError("a sequence needs at least one snapshot")
        self._entity_counts = np.searchsorted(self.vocab.entity_birth, np.arange(n), side="right")
        self._relation_counts = np.searchsorted(self.vocab.relation_birth, np.arange(n), side="right")
        self._validate()

    def _validate(self):
        seen: dict[tuple, tuple[int, str]] = {}
        for i, snap in enumerate(self.snapshots):
            ne, nr = self._entity_counts[i], self._relation_counts[i]
            for name in SPLITS:
                arr = snap.split(name)
                if arr.size == 0:
                    continue
                if arr.min() < 0:
                    raise ValidationError(f"snapshot {i} {name}: negative id")
                if arr[:, [0, 2]].max() >= ne or arr[:, 1].max() >= nr:
                    raise ValidationError(
                        f"snapshot {i} {name}: references an id born after snapshot {i}"
                    )
                for row in map(tuple, arr.tolist()):
                    if row in seen:
                        j, other = seen[row]
                        if j == i:
                            raise ValidationError(
                                f"snapshot {i}: triple {row} appears in both {other} and {name}"
                            )
                        raise ValidationError(
                            f"snapshot {i}: triple {row} already introduced at snapshot {j} "
                            f"(containment violation)"
                        )
                    seen[row] = (i, name)
        ent_born = np.zeros(self.vocab.n_entities, dtype=bool)
        rel_born = np.zeros(self.vocab.n_relations, dtype=bool)
        for snap in self.snapshots:
            allt = snap.all_triples()
            ent_born[allt[:, 0]] = True
            ent_born[allt[:, 2]] = True
            rel_born[allt[:, 1]] = True
        if not ent_born.all() or not rel_born.all():
            raise ValidationError("vocabulary contains ids used by no triple")
        for i, snap in enumerate(self.snapshots):
            allt = snap.all_triples()
            lo_e = self._entity_counts[i - 1] if i else 0
            lo_r = self._relation_counts[i - 1] if i else 0
            used_e = np.union1d(allt[:, 0], allt[:, 2])
            used_r = np.unique(allt[:, 1])
            if np.setdiff1d(np.arange(lo_e, self._entity_counts[i]), used_e).size or np.setdiff1d(
                np.arange(lo_r, self._relation_counts[i]), used_r
            ).size:
                raise ValidationError(f"snapshot {i}: an id is born here but not used by its triples")

    @property
    def n_snapshots(self) -> int:
        return len(self.snapshots)

    @property
    def last(self) -> int:
        return len(self.snapshots) - 1

    def _check(self, i: int):
        if not 0 <= i < len(self.snapshots):
            raise IndexError(f"snapshot index {i} out of range 0..{len(self.snapshots) - 1}")

    def n_entities(self, i: int) -> int:
        self._check(i)
        return int(self._entity_counts[i])

    def n_relations(self, i: int) -> int:
        self._check(i)
        return int(self._relation_counts[i])

    def deltas(self, i: int) -> DeltaView:
        self._check(i)
        lo_e = int(self._entity_counts[i - 1]) if i else 0
        lo_r = int(self._relation_counts[i - 1]) if i else 0
        snap = self.snapshots[i]
        return DeltaView(
            train=snap.train,
            test=snap.test,
            entities=range(lo_e, int(self._entity_counts[i])),
            relations=range(lo_r, int(self._relation_counts[i])),
        )

    def cumulative(self, i: int, splits: Iterable[str] = SPLITS) -> np.ndarray:
        """All triples of the given splits over snapshots ``0..i``."""
        self._check(i)
        splits = tuple(splits)
        parts = [s.split(name) for s in self.snapshots[: i + 1] for name in splits]
        return np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)

    def names(self, triples: np.ndarray) -> list[tuple[str, str, str]]:
        en, rn = self.vocab.entity_names, self.vocab.relation_names
        return [(en[h], rn[r], en[t]) for h, r, t in np.asarray(triples).tolist()]


def sequence_from_named(named: Sequence[dict[str, list[tuple[str, str, str]]]]) -> SnapshotSequence:
    """Build a sequence from per-snapshot ``{"train": [...], "valid": ..., "test": ...}`` name triples.

    Ids are assigned by first appearance: snapshot order, then train/valid/test,
    then line order, head before relation before tail.
    """
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    ent_birth: list[int] = []
    rel_birth: list[int] = []
    snapshots = []
    for i, splits in enumerate(named):
        arrays = {}
        for name in SPLITS:
            rows = []
            for h, r, t in splits.get(name, ()):
                for e in (h, t):
                    if e not in ent:
                        ent[e] = len(ent)
                        ent_birth.append(i)
                if r not in rel:
                    rel[r] = len(rel)
                    rel_birth.append(i)
                rows.append((ent[h], rel[r], ent[t]))
            arrays[name] = _as_triples(rows)
        snapshots.append(Snapshot(**arrays))
    vocab = Vocab(list(ent), list(rel), np.array(ent_birth), np.array(rel_birth))
    return SnapshotSequence(snapshots, vocab)


def read_triples_tsv(path: str | os.PathLike) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {line!r}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def write_triples_tsv(path: str | os.PathLike, rows: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in rows:
            fh.write(f"{h}\t{r}\t{t}\n")


def _snapshot_dirs(root: Path) -> list[Path]:
    found = {}
    for p in root.iterdir():
        if p.is_dir() and p.name.startswith("snapshot_"):
            try:
                found[int(p.name[len("snapshot_"):])] = p
            except ValueError:
                continue
    if not found:
        raise ParseError(f"{root}: no snapshot_<i> directories")
    n = max(found) + 1
    missing = [i for i in range(n) if i not in found]
    if missing:
        raise ParseError(f"{root}: missing snapshot directories {missing}")
    return [found[i] for i in range(n)]


def load_snapshot_sequence(dir_path: str | os.PathLike) -> SnapshotSequence:
    root = Path(dir_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    named = []
    for d in _snapshot_dirs(root):
        splits = {}
        for name in SPLITS:
            f = d / f"{name}.tsv"
            if not f.exists():
                raise ParseError(f"{f}: missing split file")
            splits[name] = read_triples_tsv(f)
        named.append(splits)
    return sequence_from_named(named)


def save_snapshot_sequence(seq: SnapshotSequence, dir_path: str | os.PathLike) -> None:
    root = Path(dir_path)
    for i, snap in enumerate(seq.snapshots):
        d = root / f"snapshot_{i}"
        d.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            write_triples_tsv(d / f"{name}.tsv", seq.names(snap.split(name)))


class FilterIndex:
    """Known-true triples used to exclude competitors when ranking.

    Membership is answered both through per-query dictionaries and, for
    vectorized checks, through a sorted array of integer triple codes.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int, built_through: int = -1):
        triples = _as_triples(triples)
        self.built_through = built_through
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self.known_tails: dict[tuple[int, int], set[int]] = {}
        self.known_heads: dict[tuple[int, int], set[int]] = {}
        for h, r, t in triples.tolist():
            self.known_tails.setdefault((h, r), set()).add(t)
            self.known_heads.setdefault((t, r), set()).add(h)
        self._codes = np.unique(self.encode(triples))
        self._tail_arrays: dict[tuple[int, int], np.ndarray] = {}
        self._head_arrays: dict[tuple[int, int], np.ndarray] = {}

    def encode(self, triples: np.ndarray) -> np.ndarray:
        triples = _as_triples(triples)
        return (triples[:, 0] * self.n_relations + triples[:, 1]) * self.n_entities + triples[:, 2]

    def __len__(self) -> int:
        return int(self._codes.size)

    def __contains__(self, triple) -> bool:
        h, r, t = (int(x) for x in triple)
        return t in self.known_tails.get((h, r), ())

    def contains_many(self, triples: np.ndarray) -> np.ndarray:
        codes = self.encode(triples)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, max(self._codes.size - 1, 0))
        if self._codes.size == 0:
            return np.zeros(codes.shape, dtype=bool)
        return self._codes[pos] == codes

    def tails(self, h: int, r: int) -> np.ndarray:
        key = (h, r)
        arr = self._tail_arrays.get(key)
        if arr is None:
            arr = np.fromiter(sorted(self.known_tails.get(key, ())), dtype=np.int64)
            self._tail_arrays[key] = arr
        return arr

    def heads(self, t: int, r: int) -> np.ndarray:
        key = (t, r)
        arr = self._head_arrays.get(key)
        if arr is None:
            arr = np.fromiter(sorted(self.known_heads.get(key, ())), dtype=np.int64)
            self._head_arrays[key] = arr
        return arr


def build_filter_index(seq: SnapshotSequence, upto: int, splits: Iterable[str] = SPLITS) -> FilterIndex:
    """Index every triple of ``splits`` in snapshots ``0..upto``."""
    seq._check(upto)
    return FilterIndex(
        seq.cumulative(upto, splits), seq.vocab.n_entities, seq.vocab.n_relations, built_through=upto
    )
