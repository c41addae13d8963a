import numpy as np
import pytest

from ckge.kgstore import FilterIndex
from ckge.models import (
    MODEL_KINDS,
    EmbeddingStore,
    Optimizer,
    ScoreModel,
    SparseGrad,
    TrainConfig,
    UpdateMask,
    apply_update,
    expand_store,
    grad_minibatch,
    init_embeddings,
    load_checkpoint,
    negative_sample,
    save_checkpoint,
    score,
    score_all_heads,
    score_all_tails,
    train_epoch,
)
from ckge.models.store import CheckpointError
from oracles import central_diff, close_rel, scalar_score


def random_store(kind, n_ent, n_rel, dim, rng):
    emb = init_embeddings(n_ent, n_rel, dim, seed=rng, kind=kind)
    # move away from unit-norm init so every coordinate matters
    emb.entity[:] = rng.normal(size=emb.entity.shape)
    if kind != "RotatE":
        emb.relation[:] = rng.normal(size=emb.relation.shape)
    return emb


def test_init_is_deterministic():
    a = init_embeddings(3, 1, 4, "uniform-xavier", 7)
    b = init_embeddings(3, 1, 4, "uniform-xavier", 7)
    assert np.array_equal(a.entity, b.entity) and np.array_equal(a.relation, b.relation)


def test_default_dimension_is_200():
    assert init_embeddings(2, 1).dim == 200


def test_xavier_bounds_empirical():
    d = 50
    emb = init_embeddings(2000, 2000, d, "uniform-xavier", 3, kind="DistMult")
    vals = np.concatenate([emb.entity.ravel(), emb.relation.ravel()])[:100_000]
    bound = np.sqrt(6.0 / d)
    assert vals.min() >= -bound and vals.max() <= bound
    # the empirical extremes reach close to the bound
    assert vals.min() < -0.999 * bound and vals.max() > 0.999 * bound


def test_transe_family_entities_unit_norm():
    for kind in ("TransE-L1", "TransE-L2", "TransH"):
        emb = init_embeddings(10, 2, 6, seed=0, kind=kind)
        assert np.allclose(np.linalg.norm(emb.entity, axis=1), 1.0)


def test_rotate_phases_in_range():
    emb = init_embeddings(4, 50, 8, seed=0, kind="RotatE")
    assert emb.relation.shape == (50, 4)
    assert emb.relation.min() >= -np.pi and emb.relation.max() < np.pi


def _store(kind, ent, rel):
    return EmbeddingStore(np.array(ent, float), np.array(rel, float), len(ent[0]), kind)


def test_score_hand_examples():
    emb = _store("TransE-L2", [[0, 0], [1, 0]], [[1, 0]])
    assert score("TransE-L2", emb, 0, 0, 1) == 0.0
    emb = _store("DistMult", [[1, 1]], [[1, 1]])
    assert score("DistMult", emb, 0, 0, 0) == 2.0


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_score_matches_scalar_loop(kind, rng):
    emb = random_store(kind, 12, 4, 6, rng)
    for _ in range(100):
        h, t = rng.integers(12, size=2)
        r = rng.integers(4)
        ref = scalar_score(kind, emb.entity[h], emb.relation[r], emb.entity[t])
        assert score(kind, emb, h, r, t) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_score_all_matches_per_triple(kind, rng):
    emb = random_store(kind, 50, 3, 8, rng)
    cands = np.arange(50)
    for h, r in [(0, 0), (7, 2), (49, 1)]:
        tails = score_all_tails(kind, emb, h, r, cands)
        heads = score_all_heads(kind, emb, r, h, cands)
        per_t = np.array([score(kind, emb, h, r, c) for c in cands])
        per_h = np.array([score(kind, emb, c, r, h) for c in cands])
        np.testing.assert_allclose(tails, per_t, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(heads, per_h, rtol=1e-9, atol=1e-12)
    single = score_all_tails(kind, emb, 3, 1, [5])
    assert single.shape == (1,)
    assert single[0] == pytest.approx(score(kind, emb, 3, 1, 5), rel=1e-9)


def test_duplicate_candidates_give_identical_scores(rng):
    emb = random_store("TransE-L1", 10, 2, 4, rng)
    s = score_all_tails("TransE-L1", emb, 0, 1, [3, 3, 4, 3])
    assert s[0] == s[1] == s[3]


def test_score_bounds():
    emb = init_embeddings(3, 1, 4, seed=0)
    with pytest.raises(IndexError):
        score("TransE-L2", emb, 0, 0, 3)
    with pytest.raises(IndexError):
        score("TransE-L2", emb, 0, 1, 0)


def test_inactive_hinge_gives_zero_loss_and_gradient():
    emb = _store("TransE-L2", [[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]], [[1.0, 0.0]])
    model = ScoreModel("TransE-L2", margin=1.0, negatives=1)
    loss, g = grad_minibatch(model, emb, [[0, 0, 1]], [[[0, 0, 2]]])
    assert loss == 0.0
    assert np.all(g.entity_grads == 0) and np.all(g.relation_grads == 0)


@pytest.mark.parametrize("kind", MODEL_KINDS)
@pytest.mark.parametrize("loss", ["margin", "logistic"])
def test_minibatch_gradient_matches_finite_differences(kind, loss, rng):
    for trial in range(5):
        emb = random_store(kind, 10, 3, 6, rng)
        model = ScoreModel(kind, margin=4.0, negatives=3, loss=loss)
        pos = np.column_stack([rng.integers(10, size=4), rng.integers(3, size=4), rng.integers(10, size=4)])
        neg = np.repeat(pos[:, None, :], 3, axis=1)
        side = rng.integers(2, size=(4, 3)) * 2
        for b in range(4):
            for j in range(3):
                neg[b, j, side[b, j]] = rng.integers(10)
        _, g = grad_minibatch(model, emb, pos, neg)
        ge, gr = g.dense(emb)
        f = lambda: grad_minibatch(model, emb, pos, neg)[0]
        assert close_rel(ge, central_diff(f, emb.entity)), (kind, loss, trial)
        assert close_rel(gr, central_diff(f, emb.relation)), (kind, loss, trial)


def test_duplicated_minibatch_doubles_loss(rng):
    emb = random_store("DistMult", 10, 2, 4, rng)
    model = ScoreModel("DistMult", negatives=2)
    pos = np.array([[0, 0, 1], [2, 1, 3]])
    neg = np.array([[[0, 0, 4], [5, 0, 1]], [[2, 1, 6], [7, 1, 3]]])
    l1, _ = grad_minibatch(model, emb, pos, neg)
    l2, _ = grad_minibatch(model, emb, np.vstack([pos, pos]), np.vstack([neg, neg]))
    assert l2 == pytest.approx(2 * l1, rel=1e-14)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_names_the_triple():
    emb = _store("DistMult", [[1e200, 1e200], [1e200, 1e200]], [[1e200, 1e200]])
    model = ScoreModel("DistMult", negatives=1, loss="logistic")
    from ckge.models import NumericError

    with pytest.raises(NumericError) as exc:
        grad_minibatch(model, emb, [[0, 0, 1]], [[[1, 0, 1]]])
    assert exc.value.triple == (0, 0, 1)


def test_negative_sampling_forced_outcome(rng):
    filt = FilterIndex([[0, 0, 1]], 2, 1)
    neg = negative_sample([[0, 0, 1]], 2, 20, filt, rng)
    # (a,p,a) by tail corruption or (b,p,b) by head corruption are the only options
    got = {tuple(x) for x in neg[0].tolist()}
    assert got <= {(0, 0, 0), (1, 0, 1)}
    tail_side = [x for x in neg[0].tolist() if x[0] == 0]
    assert all(x == [0, 0, 0] for x in tail_side)


def test_negative_sampling_side_frequency_and_filter(rng):
    n = 30
    triples = np.column_stack([rng.integers(n, size=300), rng.integers(3, size=300), rng.integers(n, size=300)])
    triples = np.unique(triples, axis=0)
    filt = FilterIndex(triples, n, 3)
    pos = triples[rng.integers(len(triples), size=10_000)]
    neg = negative_sample(pos, n, 10, filt, rng).reshape(-1, 3)
    assert not filt.contains_many(neg).any()
    rep = np.repeat(pos, 10, axis=0)
    head_changed = neg[:, 0] != rep[:, 0]
    tail_changed = neg[:, 2] != rep[:, 2]
    assert not (head_changed & tail_changed).any()
    # the side is a fair coin; unchanged rows can't happen because the original is filtered
    frac_heads = head_changed[:100_000].mean()
    assert abs(frac_heads - 0.5) < 0.01


def test_negative_sampling_exhausted_raises(rng):
    from ckge.models import SamplingError

    filt = FilterIndex([[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 1]], 2, 1)
    with pytest.raises(SamplingError):
        negative_sample([[0, 0, 1]], 2, 1, filt, rng)


def test_apply_update_masks_and_sgd():
    emb = _store("DistMult", [[1.0, 2.0], [3.0, 4.0]], [[0.5, 0.5]])
    g = SparseGrad.build([0, 1], np.array([[1.0, 1.0], [2.0, 2.0]]), [0], np.array([[1.0, -1.0]]))
    frozen = emb.copy()
    mask = UpdateMask(np.ones(2, bool), np.ones(1, bool))
    apply_update(frozen, g, Optimizer("sgd"), 0.1, mask)
    assert np.array_equal(frozen.entity, emb.entity) and np.array_equal(frozen.relation, emb.relation)

    zero = emb.copy()
    apply_update(zero, g.scaled(0.0), Optimizer("sgd"), 0.1)
    assert np.array_equal(zero.entity, emb.entity)

    one = _store("DistMult", [[1.0, 2.0]], [[0.0, 0.0]])
    gg = SparseGrad.build([0], np.array([[0.3, -0.7]]), [], np.zeros((0, 2)))
    apply_update(one, gg, Optimizer("sgd"), 0.5)
    assert np.array_equal(one.entity[0], np.array([1.0, 2.0]) - 0.5 * np.array([0.3, -0.7]))


def test_apply_update_dim_mask_bit_identical(rng):
    emb = random_store("TransE-L2", 6, 2, 5, rng)
    before = emb.copy()
    emask = np.zeros(emb.entity.shape, bool)
    emask[:, [0, 3]] = True
    g = SparseGrad.build(np.arange(6), rng.normal(size=(6, 5)), [0, 1], rng.normal(size=(2, 5)))
    for kind in ("sgd", "adagrad"):
        apply_update(emb, g, Optimizer(kind), 0.3, UpdateMask(emask, None))
        assert np.array_equal(emb.entity[:, [0, 3]], before.entity[:, [0, 3]])
        assert not np.array_equal(emb.entity[:, 1], before.entity[:, 1])


def test_adagrad_step():
    emb = _store("DistMult", [[1.0]], [[1.0]])
    opt = Optimizer("adagrad")
    g = SparseGrad.build([0], np.array([[2.0]]), [], np.zeros((0, 1)))
    apply_update(emb, g, opt, 0.1)
    assert emb.entity[0, 0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-10))


def _toy_triples():
    return np.array([[i % 8, i % 3, (i * 5 + 1) % 8] for i in range(20)])


def test_train_epoch_zero_lr_is_noop(rng):
    emb = init_embeddings(8, 3, 6, seed=1, kind="DistMult")
    before = emb.copy()
    model = ScoreModel("DistMult", lr=0.0)
    stats = train_epoch(model, emb, _toy_triples(), TrainConfig(batch_size=8, renormalize=False), rng=rng)
    assert np.array_equal(emb.entity, before.entity) and np.array_equal(emb.relation, before.relation)
    assert stats.mean_loss > 0


def test_train_epoch_anchor_penalty_limits_drift():
    from ckge.continual.penalties import reg_term

    def run(lam):
        emb = init_embeddings(8, 3, 6, seed=1, kind="TransE-L2")
        anchor = emb.copy()
        term = lambda e: reg_term(e, anchor, None, "L2", lam)
        model = ScoreModel("TransE-L2", lr=0.05)
        train_epoch(model, emb, _toy_triples(), TrainConfig(batch_size=4, renormalize=False), [term],
                    rng=np.random.default_rng(0))
        return np.linalg.norm(emb.entity - anchor.entity) + np.linalg.norm(emb.relation - anchor.relation)

    assert run(5.0) < run(0.0)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_loss_trend_decreases(kind):
    # loss measured on one fixed negative draw so sampling noise does not mask the trend
    triples = np.unique(_toy_triples(), axis=0)
    emb = init_embeddings(8, 3, 8, seed=2, kind=kind)
    model = ScoreModel(kind, lr=0.01, negatives=4, margin=2.0)
    rng = np.random.default_rng(0)
    fixed_neg = negative_sample(triples, 8, 4, FilterIndex(triples, 8, 3), np.random.default_rng(7))
    losses = []
    for _ in range(50):
        losses.append(grad_minibatch(model, emb, triples, fixed_neg)[0])
        train_epoch(model, emb, triples, TrainConfig(batch_size=len(triples)), rng=rng)
    ups = sum(b > a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
    assert ups <= 0.1 * 49


def test_expand_store_identity_and_growth(rng):
    emb = random_store("TransE-L2", 5, 2, 4, rng)
    same = expand_store(emb, 5, 2, seed=0)
    assert np.array_equal(same.entity, emb.entity) and np.array_equal(same.relation, emb.relation)
    grown = expand_store(emb, 9, 3, seed=0)
    assert grown.entity.shape == (9, 4) and grown.relation.shape == (3, 4)
    assert np.array_equal(grown.entity[:5], emb.entity)
    with pytest.raises(ValueError):
        expand_store(emb, 4, 2)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_zero_pad_dim_preserves_scores(kind, rng):
    d = 4
    emb = random_store(kind, 6, 2, d, rng)
    big = expand_store(emb, 8, 3, seed=1, projection="zero-pad-dim", new_dim=6)
    assert big.dim == 6
    for h in range(6):
        for t in range(6):
            for r in range(2):
                assert score(kind, big, h, r, t) == pytest.approx(score(kind, emb, h, r, t), rel=1e-12, abs=1e-12)


def test_expand_preserves_pairwise_scores_exactly(rng):
    emb = random_store("ComplEx", 6, 2, 4, rng)
    big = expand_store(emb, 10, 4, seed=3)
    for h in range(6):
        assert np.array_equal(score_all_tails("ComplEx", big, h, 1, range(6)),
                              score_all_tails("ComplEx", emb, h, 1, range(6)))


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_checkpoint_roundtrip(kind, tmp_path, rng):
    emb = random_store(kind, 7, 3, 4, rng)
    p = tmp_path / "ckpt_snapshot_0.bin"
    save_checkpoint(emb, p, {"snapshot": 0})
    back = load_checkpoint(p)
    assert back.kind == kind and back.dim == 4
    assert np.array_equal(back.entity, emb.entity) and np.array_equal(back.relation, emb.relation)
    raw = p.read_bytes()
    assert raw[:4] == b"CKGE"
    p.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
