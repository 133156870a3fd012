"""Exception types shared across the package."""


class MultiresError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MultiresError, ValueError):
    """Operand shapes do not conform; the message names both shapes."""


class SequenceTooShortError(MultiresError, ValueError):
    """Input sequence is shorter than the operation's minimum length."""

    def __init__(self, got: int, minimum: int, what: str = "sequence"):
        self.got = got
        self.minimum = minimum
        super().__init__(f"{what} too short: got {got}, need at least {minimum}")


class EmptySequenceError(MultiresError, ValueError):
    """Operation received a zero-length sequence."""


class UnsupportedRatioError(MultiresError, ValueError):
    """The simple sampling variant cannot realize a non-integer rate change."""


class InsufficientDataError(MultiresError, ValueError):
    """Not enough data points for the requested fit."""


class InvalidUnitError(MultiresError, ValueError):
    """A target unit id falls outside the codebook range."""


class InvalidResolutionError(MultiresError, ValueError):
    """A resolution or rate factor is non-positive."""


class UnknownPresetError(MultiresError, KeyError):
    """Requested preset name does not exist; the message lists valid names."""


class DataError(MultiresError, ValueError):
    """Training data is inconsistent (lengths, missing files); names the item."""


class NumericError(MultiresError, ArithmeticError):
    """A numeric check failed (non-finite value); names the offending place."""


class FormatError(MultiresError, ValueError):
    """A serialized file (config, checkpoint, container) is malformed."""
