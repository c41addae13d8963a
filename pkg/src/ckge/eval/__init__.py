"""Filtered ranking, theta matrices and forgetting metrics."""
from .forgetting import CLASSES, Decomposition, ForgettingReport, build_report, classify, decompose_forgetting
from .metrics import (
    METRICS,
    POLICIES,
    MetricDomainError,
    MetricMatrix,
    ThetaResult,
    aggregate_final,
    aggregate_row,
    bwt,
    cf,
    compute_theta,
    omega_new,
    theta_matrix,
)
from .ranking import (
    ContractError,
    QueryRanks,
    RankResult,
    evaluate_testset,
    metrics_from_ranks,
    policy_kind,
    rank,
    rank_testset,
)
from .reports import (
    ReportError,
    markdown_summary,
    read_theta_csv,
    recheck_run_dir,
    write_report_json,
    write_theta_csv,
)
