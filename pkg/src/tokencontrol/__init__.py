"""Simulation and predictive control of burn-and-mint token economies.

Subpackages and modules:

* :mod:`economy` - state, controls and the one-step dynamics
* :mod:`objective` - tracking cost, references and derivatives
* :mod:`trajopt` - LQR, iLQR, augmented-Lagrangian iLQR, QP and SCP solvers
* :mod:`baselines` - PID and income-clearing policies
* :mod:`game` - node best responses and the bilevel incentive problem
* :mod:`forecast` - growth patterns, demand/income models, AR forecasts
* :mod:`simulate` - closed-loop receding-horizon runs
* :mod:`harness` - experiments, statistics, reports and the CLI
"""

from .economy import ControlInput, EconomyState, FeasibilityBounds, ForecastPoint, Trajectory, step
from .objective import CostWeights, ReferencePath, stage_cost, total_cost
from .simulate import Scenario, run_closed_loop, standard_scenario

__version__ = "0.1.0"

__all__ = [
    "ControlInput", "EconomyState", "FeasibilityBounds", "ForecastPoint", "Trajectory", "step",
    "CostWeights", "ReferencePath", "stage_cost", "total_cost",
    "Scenario", "run_closed_loop", "standard_scenario",
]
