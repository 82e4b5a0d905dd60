"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes or lengths do not agree."""


class NumericError(ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""


class DeadlockError(RuntimeError):
    """A collective round could not complete because a rank never arrived."""


class DivergenceError(RuntimeError):
    """Replicated state differs between ranks."""


class DatasetParseError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; ``record`` holds the diagnostics."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class ConfigError(ValueError):
    """An experiment configuration is invalid; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
