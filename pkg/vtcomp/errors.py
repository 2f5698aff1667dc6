"""Exception types shared across vtcomp and their CLI exit codes."""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class VtcompError(Exception):
    """Base class for all vtcomp errors."""

    exit_code = EXIT_VALIDATION


class ValidationError(VtcompError, ValueError):
    """Malformed input data: dumps, configs, attention maps."""


class ContractError(ValidationError):
    """Two collaborating values disagree (shape, plan vs. config, header vs. plan)."""


class CoverageError(ValidationError):
    """A frame ended up with zero scoring observations."""


class ScheduleError(VtcompError, ValueError):
    """No schedule satisfies the requested construction constraints.

    Args:
        message: Human readable reason.
        best_average: Closest achievable average token count, if any.
    """

    def __init__(self, message: str, best_average: Optional[float] = None):
        super().__init__(message)
        self.best_average = best_average


class NumericError(VtcompError, ArithmeticError):
    """A loss or activation became non-finite.

    Args:
        message: Human readable reason.
        layer: Layer index where the problem was detected, if known.
        step: Training step where the problem was detected, if known.
    """

    exit_code = EXIT_NUMERIC

    def __init__(
        self,
        message: str,
        *,
        layer: Optional[int] = None,
        step: Optional[int] = None,
    ):
        super().__init__(message)
        self.layer = layer
        self.step = step
