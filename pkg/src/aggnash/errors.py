"""Exception hierarchy shared by all aggnash modules."""

from __future__ import annotations

import math


class AggNashError(Exception):
    """Base class for every error raised by this package."""


class InputShapeError(AggNashError, ValueError):
    """An array argument has the wrong length or shape."""


class AssumptionViolation(AggNashError):
    """A standing assumption of the convergence result does not hold.

    ``assumption`` is a short label such as ``"Assumption 4.2"`` that the CLI
    copies into ``assumptions.json`` and into its exit message.
    """

    def __init__(self, assumption: str, message: str):
        super().__init__(f"{assumption} violated: {message}")
        self.assumption = assumption


class InitialConditionError(AssumptionViolation):
    """The estimator state nu(0) does not sum to zero across players."""

    def __init__(self, message: str):
        super().__init__("Theorem 1 initial condition", message)


class OracleFailure(AggNashError):
    """The centralized NE iteration did not reach its residual tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"NE oracle did not converge after {iterations} iterations "
            f"(final residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class ScheduleExhausted(AggNashError):
    """A finite switching schedule was queried beyond its horizon."""


class DivergenceError(AggNashError):
    """The integrated state blew up.

    The partial trajectory up to the last finite sample is attached as
    ``trajectory``.
    """

    def __init__(self, time: float, trajectory=None):
        super().__init__(f"state diverged at t={time:.6g}")
        self.time = time
        self.trajectory = trajectory


class HorizonTooShort(AggNashError):
    """The truncated Gramian integral left a tail larger than allowed."""

    def __init__(self, tail: float, suggested_horizon: float):
        if math.isfinite(suggested_horizon):
            hint = f"try horizon >= {suggested_horizon:.4g}"
        else:
            hint = "transition matrix shows no exponential decay"
        super().__init__(f"truncation tail {tail:.3e} exceeds bound; {hint}")
        self.tail = tail
        self.suggested_horizon = suggested_horizon


class ConfigError(AggNashError):
    """A scenario configuration failed schema validation."""
