"""Exception hierarchy shared by every module of the engine."""

from typing import Optional, Sequence


class CopulaInlaError(Exception):
    """Base class for all engine errors"""


class ModelSpecError(CopulaInlaError, ValueError):
    """Invalid model specification, hyperparameters or observations"""


class ConvergenceError(CopulaInlaError, RuntimeError):
    """Newton iterations for the Gaussian approximation did not converge"""

    def __init__(self, message: str, theta: Optional[Sequence[float]] = None,
                 gradient_norm: Optional[float] = None):
        super().__init__(message)
        self.theta = None if theta is None else [float(t) for t in theta]
        self.gradient_norm = gradient_norm


class MarginalFitError(CopulaInlaError, RuntimeError):
    """Improved marginal grid is too concentrated to fit a skew-normal"""


class SingularFixedEffectsError(CopulaInlaError, RuntimeError):
    """Covariance of the fixed effects is numerically singular"""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class ExplorationError(CopulaInlaError, RuntimeError):
    """Hyperparameter exploration produced an unusable grid"""


class ExperimentError(CopulaInlaError, RuntimeError):
    """Simulation experiment could not produce a valid report"""


class CheckpointError(CopulaInlaError, ValueError):
    """Chain checkpoint file is malformed"""
