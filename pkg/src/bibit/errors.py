"""Exception hierarchy shared by every bibit module."""


class BibitError(Exception):
    """Base class for all library errors."""


class DomainError(BibitError, ValueError):
    """An input value lies outside the operation's domain."""


class DegenerateInputError(DomainError):
    """An input is degenerate for the operation (e.g. an all-zero activation)."""


class ShapeError(BibitError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(BibitError, ValueError):
    """A configuration is missing a required field or is inconsistent."""


class StateError(BibitError, RuntimeError):
    """An operation was invoked in the wrong order."""


class ParseError(BibitError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(BibitError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
