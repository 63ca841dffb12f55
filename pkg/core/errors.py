"""Exception hierarchy. Every error carries the CLI exit code it maps to."""

from config import config


class TypicalityError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = config.EXIT_CODES["unexpected"]
    error_type: str = "Typicality Error"


# ====================== CONFIGURATION ======================
class ConfigError(TypicalityError):
    exit_code = config.EXIT_CODES["config"]
    error_type = "Config Error"

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


# ====================== NUMERICAL FAILURES ======================
class NumericalError(TypicalityError):
    exit_code = config.EXIT_CODES["numerical"]
    error_type = "Numerical Failure"


class NonDiagonalizable(NumericalError):
    error_type = "Non-Diagonalizable Generator"


class DegenerateSteadyState(NumericalError):
    error_type = "Degenerate Steady State"


class DegenerateMode(NumericalError):
    error_type = "Degenerate Mode"


class GapClosed(NumericalError):
    error_type = "Gap Closed"


class NotReached(NumericalError):
    error_type = "Mixing Threshold Not Reached"


class EmptyTypicalSet(NumericalError):
    error_type = "Empty Typical Set"


class DegenerateFit(NumericalError):
    error_type = "Degenerate Fit"


class DenseLimitExceeded(NumericalError):
    error_type = "Dense Limit Exceeded"


# ====================== INVALID INPUTS ======================
class InvalidModel(TypicalityError, ValueError):
    exit_code = config.EXIT_CODES["config"]
    error_type = "Invalid Model"


class InvalidEnsemble(TypicalityError, ValueError):
    exit_code = config.EXIT_CODES["config"]
    error_type = "Invalid Ensemble"


class RateProfileViolation(TypicalityError, ValueError):
    exit_code = config.EXIT_CODES["config"]
    error_type = "Rate Profile Violation"


class ModeIndexError(TypicalityError, IndexError):
    exit_code = config.EXIT_CODES["config"]
    error_type = "Mode Index Out Of Range"


# ====================== CHECK VIOLATIONS ======================
class BoundViolated(TypicalityError):
    exit_code = config.EXIT_CODES["violation"]
    error_type = "Bound Violated"
