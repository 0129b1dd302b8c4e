"""Exception types shared across the package."""


class SimbaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SimbaError, ValueError):
    """Operand shapes violate an operation's contract."""


class ParameterError(SimbaError, ValueError):
    """A scalar argument or hyperparameter is out of its valid range."""


class ConfigError(SimbaError, ValueError):
    """A configuration value or file is invalid.

    ``path`` locates the offending field, e.g. ``"optim.base_lr"``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericError(SimbaError, ArithmeticError):
    """A numerical operation failed (singular system, non-finite abort)."""


class DataError(SimbaError, ValueError):
    """A dataset violates an invariant (too short, constant channel, ...)."""


class CsvParseError(DataError):
    """A CSV cell could not be parsed; names the row and column."""


class CsvFormatError(DataError):
    """A CSV file is structurally malformed (ragged rows, missing header)."""
