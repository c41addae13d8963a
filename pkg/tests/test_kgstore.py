import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckge.kgstore import (
    FilterIndex,
    ParseError,
    ValidationError,
    build_filter_index,
    load_snapshot_sequence,
    read_triples_tsv,
    save_snapshot_sequence,
    sequence_from_named,
    write_triples_tsv,
)
from ckge.toydata import bundled_dir
from conftest import toy_named


def _write_named(root, named):
    for i, snap in enumerate(named):
        d = root / f"snapshot_{i}"
        d.mkdir(parents=True)
        for name in ("train", "valid", "test"):
            write_triples_tsv(d / f"{name}.tsv", snap.get(name, []))


def test_minimal_sequence(tmp_path):
    _write_named(tmp_path, [{"train": [("a", "p", "b")]}])
    seq = load_snapshot_sequence(tmp_path)
    assert seq.last == 0 and seq.n_entities(0) == 2 and seq.n_relations(0) == 1


def test_toy_counts_match_independent_line_count(tmp_path):
    named = toy_named()
    _write_named(tmp_path, named)
    seq = load_snapshot_sequence(tmp_path)
    # recount from the files with plain string handling
    ents, rels = set(), set()
    for i in range(3):
        for name in ("train", "valid", "test"):
            for line in (tmp_path / f"snapshot_{i}" / f"{name}.tsv").read_text().splitlines():
                h, r, t = line.split("\t")
                ents |= {h, t}
                rels.add(r)
        assert seq.n_entities(i) == len(ents) and seq.n_relations(i) == len(rels)
    assert [len(s.all_triples()) for s in seq.snapshots] == [6, 5, 4]


def test_deltas(toy_seq):
    d0 = toy_seq.deltas(0)
    assert d0.entities == range(0, toy_seq.n_entities(0))
    assert len(toy_seq.deltas(1).entities) == 2  # e and f
    assert len(toy_seq.deltas(2).entities) == 0
    with pytest.raises(IndexError):
        toy_seq.deltas(3)
    # union of deltas rebuilds the cumulative sets, and deltas never overlap earlier ids
    covered = []
    for i in range(3):
        d = toy_seq.deltas(i)
        assert all(e >= (toy_seq.n_entities(i - 1) if i else 0) for e in d.entities)
        covered += list(d.entities)
        assert covered == list(range(toy_seq.n_entities(i)))


def test_roundtrip(tmp_path, toy_seq):
    save_snapshot_sequence(toy_seq, tmp_path)
    back = load_snapshot_sequence(tmp_path)
    assert back.vocab.entity_names == toy_seq.vocab.entity_names
    assert back.vocab.relation_names == toy_seq.vocab.relation_names
    for a, b in zip(back.snapshots, toy_seq.snapshots):
        for name in ("train", "valid", "test"):
            assert np.array_equal(a.split(name), b.split(name))


def test_bundled_toy_loads():
    seq = load_snapshot_sequence(bundled_dir() / "toy")
    assert seq.n_snapshots == 3
    assert seq.n_entities(2) >= 2 * seq.n_entities(0)


def test_parse_error_names_file_and_line(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\tp\tb\nbroken line\n")
    with pytest.raises(ParseError, match=r"x\.tsv:2"):
        read_triples_tsv(p)


def test_missing_split_and_directory(tmp_path):
    (tmp_path / "snapshot_0").mkdir()
    write_triples_tsv(tmp_path / "snapshot_0" / "train.tsv", [("a", "p", "b")])
    with pytest.raises(ParseError, match="valid.tsv"):
        load_snapshot_sequence(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_snapshot_sequence(tmp_path / "nope")


def test_validation_errors():
    with pytest.raises(ValidationError, match="containment"):
        sequence_from_named([{"train": [("a", "p", "b")]}, {"train": [("a", "p", "b"), ("b", "p", "c")]}])
    with pytest.raises(ValidationError, match="both"):
        sequence_from_named([{"train": [("a", "p", "b")], "test": [("a", "p", "b")]}])


def test_later_born_id_rejected():
    from ckge.kgstore import Snapshot, SnapshotSequence, Vocab

    vocab = Vocab(["a", "b", "c"], ["p"], [0, 0, 1], [0])
    snaps = [Snapshot([[0, 0, 2]], [], []), Snapshot([[0, 0, 1]], [], [])]
    with pytest.raises(ValidationError, match="born after snapshot 0"):
        SnapshotSequence(snaps, vocab)


def test_filter_toy_enumeration():
    seq = sequence_from_named([{"train": [("a", "p", "b"), ("a", "p", "c")]}])
    f = build_filter_index(seq, 0)
    assert f.known_tails[(0, 0)] == {1, 2}
    assert len(f) == 2 and f.built_through == 0


def test_filter_covers_all_splits_through_upto(toy_seq):
    f1 = build_filter_index(toy_seq, 1)
    assert len(f1) == 11
    assert tuple(toy_seq.snapshots[1].test[0]) in f1
    assert tuple(toy_seq.snapshots[2].test[0]) not in f1


def test_filter_matches_linear_scan(rng):
    known = rng.integers(0, [30, 4, 30], size=(200, 3))
    f = FilterIndex(known, 30, 4)
    rows = {tuple(x) for x in known.tolist()}
    probes = np.concatenate([rng.integers(0, [30, 4, 30], size=(900, 3)), known[:100]])
    vec = f.contains_many(probes)
    for p, v in zip(probes.tolist(), vec):
        expect = any(tuple(p) == r for r in rows)
        assert (tuple(p) in f) == expect == bool(v)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 5)), min_size=1, max_size=25,
                unique=True), st.integers(1, 3))
def test_generated_sequences_keep_disjoint_deltas(rows, n):
    named = [{"train": [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows[i::n]]} for i in range(n)]
    named = [s for s in named if s["train"]]
    seq = sequence_from_named(named)
    for i in range(seq.n_snapshots):
        d = seq.deltas(i)
        prev = seq.n_entities(i - 1) if i else 0
        assert d.entities.start == prev and d.entities.stop == seq.n_entities(i)
    f = build_filter_index(seq, seq.last)
    assert len(f) == len(rows)
