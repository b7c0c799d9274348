"""Exception hierarchy.

Each error family maps to one CLI exit code (see ``echosim.cli``).
"""


class EchoSimError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    category = "error"


class ConfigError(EchoSimError, ValueError):
    """Invalid configuration or violated precondition."""

    exit_code = 2
    category = "config-invalid"


class GridTooCoarseError(ConfigError):
    category = "grid-too-coarse"


class GridMismatchError(ConfigError):
    category = "grid-mismatch"


class NumericAbort(EchoSimError, RuntimeError):
    """A computation left its domain of validity."""

    exit_code = 3
    category = "numeric-abort"


class LeakageError(NumericAbort):
    """Probability reached the periodic boundary of the grid."""

    category = "leakage-abort"

    def __init__(self, message, leaked=None, realization=None):
        super().__init__(message)
        self.leaked = leaked
        self.realization = realization


class TrajectoryEscapeError(NumericAbort):
    category = "trajectory-escape"


class DomainError(NumericAbort):
    category = "domain-error"


class DegenerateStateError(NumericAbort):
    category = "degenerate-state"


class FitError(EchoSimError, RuntimeError):
    """The decay-rate fit could not be carried out."""

    exit_code = 4
    category = "fit-failure"


class InsufficientDecayError(FitError):
    category = "insufficient-decay"


class FloorDominatedError(FitError):
    category = "floor-dominated"
