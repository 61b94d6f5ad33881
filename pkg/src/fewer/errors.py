"""Exception taxonomy shared across the package.

Every error raised on purpose derives from FewerError, so callers can
catch one base class at the boundary (the CLI does exactly that) and
map subclasses to exit codes.
"""


class FewerError(Exception):
    """Base class for all errors this package raises deliberately."""


class ShapeError(FewerError):
    """Operands have incompatible or degenerate dimensions."""


class ParameterError(FewerError):
    """A configuration value or argument is outside its legal range."""


class DataError(FewerError):
    """Input data violates a documented precondition."""


class FormatError(FewerError):
    """A binary or serialized payload is malformed.

    Carries the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(FewerError):
    """A computation produced a non-finite value."""
