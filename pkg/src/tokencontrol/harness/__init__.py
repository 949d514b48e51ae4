"""Experiment orchestration, metrics, statistics, reports and the CLI."""

from .experiment import (ExperimentConfig, MetricsReport, PairwiseTest, RunRow, compare_controllers,
                         open_loop_problem, run_game_suite, standard_suite)
from .metrics import control_effort, price_volatility, tracking_mse
from .report import emit_report
from .stats import WilcoxonResult, wilcoxon_signed_rank

__all__ = [
    "ExperimentConfig", "MetricsReport", "PairwiseTest", "RunRow", "compare_controllers", "open_loop_problem",
    "run_game_suite", "standard_suite", "control_effort", "price_volatility", "tracking_mse", "emit_report",
    "WilcoxonResult", "wilcoxon_signed_rank",
]
