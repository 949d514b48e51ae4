"""Trajectory optimizers: Riccati LQR, iLQR, AL-iLQR, a dense QP solver and SCP."""

from .ilqr import AugmentedLagrangian, al_ilqr_solve, ilqr_solve
from .lqr import backward_pass, lqr_gains, lqr_rollout
from .problem import (
    ControlProblem,
    LQProblem,
    OCProblem,
    SolveOptions,
    SolveResult,
    TokenProblem,
    rollout,
    token_problem,
)
from .qp import QPResult, kkt_residuals, qp_solve
from .scp import scp_solve

__all__ = [
    "AugmentedLagrangian", "ControlProblem", "LQProblem", "OCProblem", "QPResult",
    "SolveOptions", "SolveResult", "TokenProblem", "al_ilqr_solve", "backward_pass",
    "ilqr_solve", "kkt_residuals", "lqr_gains", "lqr_rollout", "qp_solve", "rollout",
    "scp_solve", "token_problem",
]
