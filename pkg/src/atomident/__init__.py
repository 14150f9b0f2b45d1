"""Sparse identification of linear systems with a continuum of first-order atoms."""

from .bench_cli import (
    ARXModel,
    BenchReport,
    CVConfig,
    ExperimentConfig,
    emit_report,
    fit_arx,
    load_report,
    run_method,
    run_monte_carlo,
    select_lambda_cv,
)
from .greedy_atoms import CandidateSearchConfig, GreedyConfig, GreedyTrace, init_atoms, run_greedy, search_candidate
from .group_lasso import ConvergenceError, GroupLassoProblem, GroupLassoSolution, kkt_violation, solve, violation_score
from .lti_core import (
    IdentDataset,
    Pole,
    SparseModel,
    benchmark_system,
    bias_variance_mse,
    fit_metric,
    generate_dataset,
)
from .sparse_refine import AdaptiveConfig, StabilityConfig, adaptive_refine, ls_refit, stability_select

__all__ = [
    "ARXModel", "AdaptiveConfig", "BenchReport", "CVConfig", "CandidateSearchConfig", "ConvergenceError",
    "ExperimentConfig", "GreedyConfig", "GreedyTrace", "GroupLassoProblem", "GroupLassoSolution",
    "IdentDataset", "Pole", "SparseModel", "StabilityConfig", "adaptive_refine", "benchmark_system",
    "bias_variance_mse", "emit_report", "fit_arx", "fit_metric", "generate_dataset", "init_atoms",
    "kkt_violation", "load_report", "ls_refit", "run_greedy", "run_method", "run_monte_carlo",
    "search_candidate", "select_lambda_cv", "solve", "stability_select", "violation_score",
]
