"""Snapshot-by-snapshot training with configurable forgetting mitigation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..kgstore import FilterIndex, SnapshotSequence
from ..models.store import EmbeddingStore, expand_store, init_embeddings, neighbor_mean_init, save_checkpoint
from ..models.training import Optimizer, ScoreModel, TrainConfig, UpdateMask, train_epoch
from .ordering import order_triples
from .penalties import (
    AnchorPenalty,
    FisherWeights,
    PenaltyConfigError,
    align_term,
    ewc_fisher_diag,
    frequency_weights,
    reconstruction_term,
)
from .replay import ReplayBuffer, replay_sample, update_buffer

log = logging.getLogger(__name__)

PENALTY_KINDS = ("reg", "rec", "align", "ewc")
FREEZE_MODES = ("never", "always", "first_k_epochs")


@dataclass
class ReplayConfig:
    buffer_size: int = 1000
    sample_per_batch: int = 64


@dataclass
class PenaltySpec:
    kind: str
    lam: float = 1.0
    weighting: str = "uniform"  # reg: uniform | frequency | fisher
    psi: str = "L2"
    mode: str = "transe-structural"  # rec only
    fisher_samples: int = 1000  # ewc, and reg with fisher weighting

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise PenaltyConfigError(f"unknown penalty kind {self.kind!r}")
        if self.lam < 0:
            raise PenaltyConfigError(f"{self.kind}: lambda must be >= 0")
        if self.weighting not in ("uniform", "frequency", "fisher"):
            raise PenaltyConfigError(f"unknown weighting {self.weighting!r}")

    @property
    def needs_fisher(self):
        return self.kind == "ewc" or (self.kind == "reg" and self.weighting == "fisher")


@dataclass
class MaskSpec:
    """Coordinates of previously existing rows that never receive updates."""

    dims: list = field(default_factory=list)
    relations: bool = False


@dataclass
class StrategyConfig:
    base: str = "finetune"
    replay: Optional[ReplayConfig] = None
    ordering: bool = False
    freeze_old: str = "never"
    freeze_epochs: int = 0
    mask: Optional[MaskSpec] = None
    penalties: list = field(default_factory=list)
    dim_expansion: Optional[list] = None

    def __post_init__(self):
        if self.base not in ("finetune", "retrain"):
            raise ValueError(f"unknown base strategy {self.base!r}")
        if self.freeze_old not in FREEZE_MODES:
            raise ValueError(f"freeze_old must be one of {FREEZE_MODES}")
        self.penalties = [p if isinstance(p, PenaltySpec) else PenaltySpec(**p) for p in self.penalties]
        if isinstance(self.replay, dict):
            self.replay = ReplayConfig(**self.replay)
        if isinstance(self.mask, dict):
            self.mask = MaskSpec(**self.mask)
        if self.base == "retrain" and (
            self.replay or self.ordering or self.freeze_old != "never" or self.mask
            or self.penalties or self.dim_expansion
        ):
            raise ValueError("retrain excludes every other strategy option")

    def to_dict(self):
        return asdict(self)


@dataclass
class RunSettings:
    """Training budget shared by every snapshot of a run."""

    dim: int = 200
    epochs: int = 100
    batch_size: int = 512
    init: str = "uniform-xavier"
    new_entity_init: str = "random"
    renormalize: bool = True
    early_stopping_patience: Optional[int] = None
    valid_every: int = 5
    max_tries: int = 50


@dataclass
class RunArtifacts:
    checkpoints: list
    stats: list
    buffer_state: Optional[dict] = None
    untrained_entities: list = field(default_factory=list)
    degenerate_align_rows: int = 0

    def save(self, out_dir, seq: Optional[SnapshotSequence] = None, extra: Optional[dict] = None):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, emb in enumerate(self.checkpoints):
            meta = {"snapshot": i}
            if seq is not None:
                meta.update(vocab_entities=seq.n_entities(i), vocab_relations=seq.n_relations(i))
            meta.update(extra or {})
            save_checkpoint(emb, out / f"ckpt_snapshot_{i}.bin", meta)


def _dim_at(strat: StrategyConfig, settings: RunSettings, i: int) -> int:
    if strat.dim_expansion:
        sched = list(strat.dim_expansion)
        return int(sched[min(i, len(sched) - 1)])
    return settings.dim


def _freeze_mask(emb, strat, n_old_e, n_old_r, epoch) -> Optional[UpdateMask]:
    freeze = strat.freeze_old == "always" or (strat.freeze_old == "first_k_epochs" and epoch < strat.freeze_epochs)
    if not freeze and strat.mask is None:
        return None
    e = np.zeros(emb.entity.shape, dtype=bool)
    r = np.zeros(emb.relation.shape, dtype=bool)
    if freeze:
        e[:n_old_e] = True
        r[:n_old_r] = True
    if strat.mask is not None and strat.mask.dims:
        dims = np.asarray(strat.mask.dims, dtype=np.int64)
        e[:n_old_e, dims[dims < e.shape[1]]] = True
        if strat.mask.relations:
            r[:n_old_r, dims[dims < r.shape[1]]] = True
    return UpdateMask(e, r)


def _valid_mrr(model, emb, seq, i, filter_index):
    from ..eval.ranking import evaluate_testset

    valid = seq.snapshots[i].valid
    if len(valid) == 0:
        return None
    return evaluate_testset(model, emb, valid, seq.n_entities(i), seq.n_entities(i), filter_index)["MRR"]


def run_continual(seq: SnapshotSequence, model: ScoreModel, strat: StrategyConfig, seed: int,
                  settings: Optional[RunSettings] = None, upto: Optional[int] = None,
                  on_checkpoint: Optional[Callable[[int, EmbeddingStore], None]] = None) -> RunArtifacts:
    """Train snapshot 0 from scratch, then update through every later snapshot.

    Each snapshot ``i`` uses three independent random streams keyed by
    ``(seed, i)`` (training, Fisher estimation, replay bookkeeping) so that
    switching an option off never perturbs the others. ``on_checkpoint(i, emb)``
    fires as soon as snapshot ``i`` is done, so callers can persist progress
    before a later snapshot fails.
    """
    settings = settings or RunSettings()
    last = seq.last if upto is None else upto
    ckpts: list[EmbeddingStore] = []
    stats = []
    untrained = []
    buffer = ReplayBuffer(strat.replay.buffer_size) if strat.replay else None
    fisher: Optional[FisherWeights] = None
    align_stats: dict = {}
    retrain = strat.base == "retrain"
    for i in range(last + 1):
        rng = np.random.default_rng([seed, i, 0])
        nE, nR = seq.n_entities(i), seq.n_relations(i)
        dim = _dim_at(strat, settings, i)
        n_old_e = seq.n_entities(i - 1) if i else 0
        n_old_r = seq.n_relations(i - 1) if i else 0
        terms = []
        replay = None
        if retrain or i == 0:
            emb = init_embeddings(nE, nR, dim, settings.init, rng, model.kind)
            if retrain:
                train = np.unique(seq.cumulative(i, ["train"]), axis=0)
            else:
                train = seq.snapshots[0].train
        else:
            prev = ckpts[-1]
            init_rows = None
            if settings.new_entity_init == "neighbor-mean" and nE > n_old_e:
                init_rows = neighbor_mean_init(prev, seq.snapshots[i].train, n_old_e, nE)
            projection = "zero-pad-dim" if dim != prev.dim else "none"
            emb = expand_store(prev, nE, nR, settings.init, rng, projection, new_dim=dim, entity_init=init_rows)
            anchor = prev if projection == "none" else expand_store(
                prev, prev.n_entities, prev.n_relations, settings.init, 0, projection, new_dim=dim)
            train = seq.snapshots[i].train
            if strat.ordering:
                train = order_triples(train, range(n_old_e))
            terms = _penalty_terms(strat, anchor, seq, i, fisher, align_stats, n_old_e, n_old_r)
            if buffer is not None and len(buffer):
                m = strat.replay.sample_per_batch
                replay = lambda g, b=buffer, m=m: replay_sample(b, m, g)
        train_filter = FilterIndex(seq.cumulative(i, ["train"]), seq.vocab.n_entities, seq.vocab.n_relations, i)
        cfg = TrainConfig(settings.batch_size, settings.renormalize, settings.max_tries,
                          shuffle=not (strat.ordering and i > 0))
        optimizer = Optimizer(model.optimizer)
        snap_stats = []
        best, best_mrr, bad_checks = None, -1.0, 0
        eval_filter = None
        for epoch in range(settings.epochs):
            mask = None if (retrain or i == 0) else _freeze_mask(emb, strat, n_old_e, n_old_r, epoch)
            st = train_epoch(model, emb, train, cfg, terms, mask, rng, filter_index=train_filter,
                             optimizer=optimizer, replay=replay, check_entities=range(n_old_e, nE))
            snap_stats.append(st)
            if settings.early_stopping_patience is not None and (epoch + 1) % settings.valid_every == 0:
                if eval_filter is None:
                    from ..kgstore import build_filter_index

                    eval_filter = build_filter_index(seq, i)
                mrr = _valid_mrr(model, emb, seq, i, eval_filter)
                if mrr is None:
                    continue
                if mrr > best_mrr:
                    best, best_mrr, bad_checks = emb.copy(), mrr, 0
                else:
                    bad_checks += 1
                    if bad_checks >= settings.early_stopping_patience:
                        break
        if best is not None:
            emb = best
        if snap_stats and snap_stats[-1].untrained_entities:
            log.info("snapshot %d: %d new entities have no training triple", i,
                     len(snap_stats[-1].untrained_entities))
        untrained.append(snap_stats[-1].untrained_entities if snap_stats else [])
        log.info("snapshot %d trained: %d epochs, last loss %.4f", i, len(snap_stats),
                 snap_stats[-1].mean_loss if snap_stats else float("nan"))
        ckpts.append(emb.copy())
        stats.append(snap_stats)
        if on_checkpoint is not None:
            on_checkpoint(i, ckpts[-1])
        if buffer is not None:
            update_buffer(buffer, seq.snapshots[i].train, np.random.default_rng([seed, i, 2]))
        if any(p.needs_fisher for p in strat.penalties):
            n_samples = max(p.fisher_samples for p in strat.penalties if p.needs_fisher)
            f = ewc_fisher_diag(model, emb, train, n_samples, np.random.default_rng([seed, i, 1]), train_filter)
            fisher = f if fisher is None else fisher + f
    return RunArtifacts(ckpts, stats, buffer.state() if buffer else None, untrained,
                        align_stats.get("degenerate_rows", 0))


def _penalty_terms(strat, anchor, seq, i, fisher, align_stats, n_old_e, n_old_r):
    terms = []
    for p in strat.penalties:
        if p.lam == 0:
            # an inert term must not perturb the update arithmetic at all
            continue
        if p.kind == "reg":
            if p.weighting == "uniform":
                w = None
            elif p.weighting == "frequency":
                w = frequency_weights(seq.cumulative(i, ["train"]), n_old_e, n_old_r)
            else:
                if fisher is None:
                    raise PenaltyConfigError("fisher weighting requested before any Fisher estimate")
                w = fisher
            terms.append(AnchorPenalty(anchor, w, p.psi, p.lam))
        elif p.kind == "ewc":
            if fisher is None:
                raise PenaltyConfigError("ewc requested before any Fisher estimate")
            terms.append(AnchorPenalty(anchor, fisher, "L2", p.lam))
        elif p.kind == "align":
            terms.append(lambda e, p=p: align_term(e, anchor, p.lam, align_stats))
        elif p.kind == "rec":
            triples = seq.snapshots[i].train
            terms.append(lambda e, p=p, t=triples: reconstruction_term(e, t, p.mode, p.lam, n_old_e, n_old_r))
    return terms
