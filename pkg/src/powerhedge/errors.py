"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericalError / FitError -> 4.
"""


class PowerHedgeError(Exception):
    """Base class for all package errors."""


class ConfigError(PowerHedgeError):
    """Invalid configuration value, file, or combination of options."""


class DataError(PowerHedgeError):
    """Problem with input market data."""


class ParseError(DataError):
    """Malformed CSV input; carries the first offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class GapError(DataError):
    """Missing hours on what should be a contiguous hourly grid."""

    def __init__(self, message, missing=()):
        self.missing = tuple(missing)
        super().__init__(message)


class DegenerateStatsError(DataError):
    """Zero-variance window where mean/SD statistics are required."""


class NumericalError(PowerHedgeError):
    """Factorization failure or overflow that survived the built-in guards."""


class FitError(NumericalError):
    """All hyperparameter optimization restarts failed; carries diagnostics."""

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class StateError(PowerHedgeError):
    """Operation called on an object in the wrong state (e.g. unfitted model)."""
