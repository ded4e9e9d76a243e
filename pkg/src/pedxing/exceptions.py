"""Exception hierarchy shared across the package."""


class PedxingError(Exception):
    """Base class for all package errors."""


class DimensionError(PedxingError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ParameterError(PedxingError, ValueError):
    """A hyper-parameter or argument is out of its valid range."""


class ContractError(PedxingError, RuntimeError):
    """An API precondition was violated by the caller."""


class DataError(PedxingError, ValueError):
    """Input data is malformed or inconsistent."""


class AnnotationParseError(DataError):
    """One or more annotation lines could not be parsed.

    ``problems`` holds ``(line_number, message)`` pairs.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems)
        super().__init__(f"malformed annotation records: {lines}")


class NumericError(PedxingError, ArithmeticError):
    """Non-finite values appeared during optimisation."""


class UndefinedMetricError(PedxingError, ValueError):
    """A metric is undefined for the given labels/predictions."""


class CheckpointError(PedxingError, IOError):
    """Checkpoint file is unreadable, truncated or of an unknown version."""


class FingerprintMismatchError(CheckpointError):
    """Checkpoint was produced under a different configuration."""


class ConfigError(PedxingError, ValueError):
    """A run configuration field failed validation."""
