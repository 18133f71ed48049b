"""Exception types raised across the package."""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateDirectionError(DomainError):
    """A zero parameter was given where a direction is required."""


class MatrixError(np.linalg.LinAlgError):
    """A matrix expected to be positive definite could not be factorized."""


class UnsupportedDimensionError(DomainError):
    pass


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is kept on the exception so callers can
    decide whether it is good enough.
    """

    def __init__(self, message: str, best: np.ndarray | None = None, residual: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class EmptyConfidenceSetError(RuntimeError):
    """The relaxed confidence set has no point inside the parameter ball."""


class PlanningError(RuntimeError):
    def __init__(self, message: str, arm_index: int | None = None):
        super().__init__(message)
        self.arm_index = arm_index


class InstanceMismatchError(ValueError):
    """A trajectory log is being read against a different problem instance."""


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
