"""Exception types shared across the package.

The CLI maps these onto exit codes: input-side problems (format, data,
parameters) exit 2, internal numeric failures exit 1.
"""


class HiveVqError(Exception):
    """Base class for all package errors."""


class FormatError(HiveVqError, ValueError):
    """A file does not follow its declared binary or text layout."""


class TruncationError(FormatError):
    """Declared payload geometry is inconsistent with the bytes present."""


class DataError(HiveVqError, ValueError):
    """Payload values violate an invariant (non-finite, out of range)."""


class ParameterError(HiveVqError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(HiveVqError, ValueError):
    """Array dimensions do not match the operation's contract."""


class AmbiguityError(HiveVqError, ValueError):
    """Input rows conflict and no resolution rule is defined."""


class StateError(HiveVqError, RuntimeError):
    """Operation invoked on an object in the wrong lifecycle phase."""


class NumericError(HiveVqError, ArithmeticError):
    """A computation is undefined for the given values."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class DegeneracyError(HiveVqError, ValueError):
    """Refinement would leave too few usable tokens."""
