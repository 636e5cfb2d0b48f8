"""Cooperative multi-robot planning with differentiable value iteration on a state lattice."""
from .coop_optimizer import AgentSpec, CoopProblem, CoopResult, collision_loss, optimize
from .errors import (ConfigurationError, InfeasibleError, NumericalCollapseError, RefusalError,
                     ScenarioError, UnsupportedOperationError)
from .lattice import Pose, TransitionModel, build_default_model, reverse_model
from .policy_executor import Trajectory, backtrace
from .scenario_io import Scenario, load_fixture, load_scenario, parse_scenario, render
from .vi_planner import CostVolume, plan

__all__ = [
    "AgentSpec", "CoopProblem", "CoopResult", "collision_loss", "optimize",
    "ConfigurationError", "InfeasibleError", "NumericalCollapseError", "RefusalError",
    "ScenarioError", "UnsupportedOperationError",
    "Pose", "TransitionModel", "build_default_model", "reverse_model",
    "Trajectory", "backtrace", "Scenario", "load_fixture", "load_scenario", "parse_scenario", "render",
    "CostVolume", "plan",
]
__version__ = "0.1.0"
