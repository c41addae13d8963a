"""Continual update strategies over a snapshot sequence."""
from .ordering import bfs_layers, order_triples
from .penalties import (
    FisherWeights,
    PenaltyConfigError,
    align_term,
    ewc_fisher_diag,
    frequency_weights,
    reconstruction_term,
    reg_term,
    AnchorPenalty,
)
from .replay import ReplayBuffer, replay_sample, update_buffer
from .runner import (
    MaskSpec,
    PenaltySpec,
    ReplayConfig,
    RunArtifacts,
    RunSettings,
    StrategyConfig,
    run_continual,
)
