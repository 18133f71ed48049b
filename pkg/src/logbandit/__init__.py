"""Logistic bandits with optimistic planning over a convex confidence set."""

from __future__ import annotations

__version__ = "0.1.0"

from .confidence import ConfidenceState, build_state, in_C, in_E
from .estimation import History, RegSchedule, fit_mle, lambda_at
from .logistic import FiniteArmSet, ProblemInstance, UnitBall, UnitSphere, mu, mu_dot
from .planning import PlanResult, SolverOpts, maximize_linear_over_E, plan_ball, plan_ofulog_r

__all__ = [
    "ConfidenceState", "FiniteArmSet", "History", "PlanResult", "ProblemInstance", "RegSchedule",
    "SolverOpts", "UnitBall", "UnitSphere", "build_state", "fit_mle", "in_C", "in_E", "lambda_at",
    "maximize_linear_over_E", "mu", "mu_dot", "plan_ball", "plan_ofulog_r",
]
