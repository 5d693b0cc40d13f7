from dataclasses import dataclass

import numpy as np

from utils import as_vector


# Bernstein order of every spline segment
ORDER = 5
# duration floor (s) standing in for the open constraint t > 0
T_MIN = 1e-3
# feasibility tolerance in constraint units (m, m/s, m/s^2)
EPS_FEAS = 1e-6


class PlannerError(Exception):
    """Base class for trajectory generation errors."""


class NonPositiveDurationError(PlannerError):
    pass


class InvalidOrderError(PlannerError):
    pass


class EmptyCorridorError(PlannerError):
    pass


class TimeOutOfRangeError(PlannerError):
    pass


class InfeasibleStartError(PlannerError):
    pass


class SolverFailureError(PlannerError):
    pass


class SolveCancelledError(PlannerError):
    pass


@dataclass(frozen=True)
class Limits:
    """Per-axis velocity (m/s) and acceleration (m/s^2) bounds."""
    v_max: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        v_max = as_vector(self.v_max)
        a_max = as_vector(self.a_max)
        if np.any(v_max <= 0) or np.any(a_max <= 0):
            raise ValueError('limits v_max and a_max must be strictly positive')
        object.__setattr__(self, 'v_max', v_max)
        object.__setattr__(self, 'a_max', a_max)

    def tightened(self, margin):
        return Limits(self.v_max - margin, self.a_max - margin)


@dataclass
class PlanTiming:
    """Wall time of each planning stage in milliseconds."""
    decomposition_ms: float = 0.0
    search_ms: float = 0.0
    optimization_ms: float = 0.0

    @property
    def total_ms(self):
        return self.decomposition_ms + self.search_ms + self.optimization_ms

    def to_dict(self):
        return {
            'decomposition_ms': self.decomposition_ms,
            'search_ms': self.search_ms,
            'optimization_ms': self.optimization_ms,
            'total_ms': self.total_ms,
        }
