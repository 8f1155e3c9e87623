"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes (2 usage, 3 data, 4 numeric).
"""


class CovNatError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CovNatError):
    """Bad configuration, unknown task/flag value, missing component."""


class ContractError(CovNatError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DataError(CovNatError):
    """Malformed or missing corpus / vocabulary / checkpoint data."""


class NumericError(CovNatError, ArithmeticError):
    """NaN or non-finite values where finite values are required."""


class TrainingError(NumericError):
    """Training diverged; carries the step at which it happened."""

    def __init__(self, message, step=None, **diagnostics):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics
