"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3, NumericError -> 4.
"""


class EquireconError(Exception):
    """Base class for all package errors."""


class ShapeError(EquireconError, ValueError):
    """Operands have incompatible dimensions."""


class DomainError(EquireconError, ValueError):
    """Argument outside its mathematical domain (e.g. scale factor <= 0)."""


class StateError(EquireconError, RuntimeError):
    """Object used in an invalid state (e.g. backward on a consumed graph)."""


class ConfigError(EquireconError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class GenerationError(ConfigError):
    """A generator could not satisfy its target within its search budget."""


class DataError(EquireconError):
    """Problem with stored or loaded data."""


class ParseError(DataError):
    """Malformed file. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DataError):
    """Loaded data violates a documented invariant."""


class NumericError(EquireconError, ArithmeticError):
    """Non-finite values or an undefined numerical quantity."""


class MeasurementError(NumericError):
    """A metric or audit quantity is undefined for the given inputs."""
