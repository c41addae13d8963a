"""Embedding storage, scoring functions and the base training loop."""
from .scoring import MODEL_KINDS, Scorer, get_scorer, wrap_phase
from .store import (
    CheckpointError,
    EmbeddingStore,
    expand_store,
    init_embeddings,
    load_checkpoint,
    neighbor_mean_init,
    save_checkpoint,
)
from .training import (
    EpochStats,
    NumericError,
    Optimizer,
    SamplingError,
    ScoreModel,
    SparseGrad,
    TrainConfig,
    UpdateMask,
    apply_update,
    grad_minibatch,
    negative_sample,
    train_epoch,
)


def score(model, emb, h, r, t):
    """Plausibility of a single triple (higher is more plausible)."""
    sc = model.scorer if hasattr(model, "scorer") else get_scorer(model)
    _check_ids(emb, h, r, t)
    return float(sc.score(emb.entity[h][None], emb.relation[r][None], emb.entity[t][None])[0])


def score_all_tails(model, emb, h, r, candidates):
    sc = model.scorer if hasattr(model, "scorer") else get_scorer(model)
    candidates = _ids(emb, candidates)
    _check_ids(emb, h, r, h)
    return sc.score_tails(emb.entity[[h]], emb.relation[[r]], emb.entity[candidates])[0]


def score_all_heads(model, emb, r, t, candidates):
    sc = model.scorer if hasattr(model, "scorer") else get_scorer(model)
    candidates = _ids(emb, candidates)
    _check_ids(emb, t, r, t)
    return sc.score_heads(emb.relation[[r]], emb.entity[[t]], emb.entity[candidates])[0]


def _ids(emb, candidates):
    import numpy as np

    c = np.asarray(candidates, dtype=np.int64).reshape(-1)
    if c.size and (c.min() < 0 or c.max() >= emb.n_entities):
        raise IndexError("candidate entity id out of range")
    return c


def _check_ids(emb, h, r, t):
    if not (0 <= h < emb.n_entities and 0 <= t < emb.n_entities):
        raise IndexError(f"entity id out of range (store has {emb.n_entities})")
    if not 0 <= r < emb.n_relations:
        raise IndexError(f"relation id out of range (store has {emb.n_relations})")


__all__ = [
    "MODEL_KINDS", "Scorer", "get_scorer", "wrap_phase", "EmbeddingStore", "CheckpointError",
    "init_embeddings", "expand_store", "neighbor_mean_init", "save_checkpoint", "load_checkpoint",
    "ScoreModel", "SparseGrad", "UpdateMask", "Optimizer", "TrainConfig", "EpochStats",
    "NumericError", "SamplingError", "negative_sample", "grad_minibatch", "apply_update",
    "train_epoch", "score", "score_all_tails", "score_all_heads",
]
