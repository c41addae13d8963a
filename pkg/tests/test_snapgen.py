import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckge.kgstore import save_snapshot_sequence
from ckge.snapgen import (
    KINDS,
    GenerationError,
    GrowthScenario,
    InfeasibleScenario,
    generate_snapshots,
    validate_cumulative,
    validate_sequence,
)
from ckge.toydata import latent_kg


def _random_base(n_ent, n_rel, n_triples, seed):
    rng = np.random.default_rng(seed)
    rows = np.unique(rng.integers(0, [n_ent, n_rel, n_ent], size=(int(n_triples * 1.05) + 10, 3)), axis=0)
    rows = rows[rng.permutation(len(rows))][:n_triples]
    assert len(rows) == n_triples
    return [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows.tolist()]


@pytest.fixture(scope="module")
def base5000():
    return _random_base(500, 20, 5000, 0)


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_passes_its_own_validation(kind, base5000):
    sc = GrowthScenario(kind, 5, seed=3)
    seq = generate_snapshots(base5000, sc)
    rep = validate_sequence(seq, sc)
    assert rep.passed, rep.failures
    assert seq.n_snapshots == 5
    assert sum(rep.delta_triples) == 5000


def test_equal_size_counts(base5000):
    seq = generate_snapshots(base5000, GrowthScenario("equal-size", 5, seed=1))
    for s in seq.snapshots:
        n = len(s.train) + len(s.valid) + len(s.test)
        assert abs(n - 1000) <= 50


def test_entity_growth_shape(base5000):
    seq = generate_snapshots(base5000, GrowthScenario("entity-growth", 5, seed=2))
    counts = [seq.n_entities(i) for i in range(5)]
    assert all(b > a for a, b in zip(counts, counts[1:]))
    assert seq.n_relations(4) - seq.n_relations(0) <= 2


def test_fact_growth_on_tiny_clique():
    ents = ["a", "b", "c"]
    pairs = [(x, y) for x in ents for y in ents if x != y]
    base = [(x, "r0", y) for x, y in pairs] + [(x, "r1", y) for x, y in pairs[:4]]
    assert len(base) == 10
    seq = generate_snapshots(base, GrowthScenario("fact-growth", 2, seed=0))
    assert seq.n_entities(0) == seq.n_entities(1) == 3


def test_split_fractions_and_anchors(base5000):
    sc = GrowthScenario("entity-growth", 4, seed=5, test_fraction=0.2, valid_fraction=0.1)
    seq = generate_snapshots(base5000, sc)
    for i, s in enumerate(seq.snapshots):
        m = len(s.all_triples())
        assert abs(len(s.test) - 0.2 * m) <= 0.02 * m + 1
        born = seq.deltas(i).entities
        trained = set(s.train[:, 0].tolist()) | set(s.train[:, 2].tolist())
        assert set(born) <= trained


def test_determinism(tmp_path, base5000):
    sc = GrowthScenario("hybrid", 4, seed=11)
    save_snapshot_sequence(generate_snapshots(base5000, sc), tmp_path / "a")
    save_snapshot_sequence(generate_snapshots(base5000, sc), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    for sub in cmp.common_dirs:
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub,
                                               ["train.tsv", "valid.tsv", "test.tsv"], shallow=False)
        assert not mismatch and not errors


def test_errors():
    with pytest.raises(GenerationError, match="need at least"):
        generate_snapshots([("a", "p", "b")] * 3, GrowthScenario("equal-size", 2))
    one_rel = _random_base(60, 1, 300, 1)
    with pytest.raises(InfeasibleScenario, match="relation"):
        generate_snapshots(one_rel, GrowthScenario("relation-growth", 3))
    split = [(f"a{i}", "p", f"a{i + 1}") for i in range(30)] + [(f"b{i}", "p", f"b{i + 1}") for i in range(30)]
    with pytest.raises(GenerationError, match="component"):
        generate_snapshots(split, GrowthScenario("equal-size", 2))
    with pytest.raises(ValueError):
        GrowthScenario("equal-size", 3, test_fraction=0.6, valid_fraction=0.5)
    with pytest.raises(ValueError):
        GrowthScenario("bogus")


def test_containment_failure_is_flagged():
    s0 = [("a", "p", "b")]
    s1 = s0 + [("b", "p", "c"), ("c", "p", "a")]
    s2 = [("b", "p", "c"), ("c", "p", "a"), ("c", "p", "d")]  # (a, p, b) removed
    rep = validate_cumulative([s0, s1, s2])
    assert not rep.passed and "snapshot 2" in rep.failures[0]
    assert validate_sequence([s0, s1, s2]).passed is False
    assert validate_sequence([s0, s1, s1 + [("c", "p", "d")]]).passed


@settings(max_examples=15, deadline=None)
@given(kind=st.sampled_from(KINDS), seed=st.integers(0, 2**32), n=st.integers(2, 5))
def test_new_triples_are_reachable(kind, seed, n):
    base = latent_kg(80, 6, 600, seed=seed % 1000)
    seq = generate_snapshots(base, GrowthScenario(kind, n, seed=seed))
    rep = validate_sequence(seq)
    assert rep.passed, rep.failures


def test_size_profiles_at_reference_scale():
    # the reference benchmark: 310,116 triples, 14,541 entities, 237 relations over 5 snapshots
    base = _random_base(14541, 237, 310116, 7)
    hi = generate_snapshots(base, GrowthScenario("increasing-size", 5, seed=0))
    for got, want in zip([len(s.all_triples()) for s in hi.snapshots], [10000, 20000, 40000, 80000, 160116]):
        assert abs(got - want) <= 0.1 * want
    ent = generate_snapshots(base, GrowthScenario("entity-growth", 5, seed=0))
    rep = validate_sequence(ent, GrowthScenario("entity-growth", 5, seed=0))
    assert rep.passed
    assert all(abs(d - 2908) <= 1 for d in rep.delta_entities)
    assert ent.n_entities(1) - ent.n_entities(0) == 5817 - 2909
