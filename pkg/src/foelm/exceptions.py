"""Exception types raised by foelm."""


class FoeError(Exception):
    """Base class for all foelm errors."""


class PgmError(FoeError, ValueError):
    """Malformed or unsupported PGM data.

    ``offset`` is the byte offset where parsing failed (``None`` for
    errors not tied to a position, such as range errors on write).
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ModelParseError(FoeError, ValueError):
    """Malformed FOE model text; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(FoeError, ValueError):
    pass


class NumericalStateError(FoeError, ArithmeticError):
    """Non-finite residuals, Jacobian entries or objective values."""


class IndefiniteSystemError(FoeError, ArithmeticError):
    """The linear solver detected a non-positive pivot or curvature,
    or failed to reach its tolerance within the iteration cap."""
