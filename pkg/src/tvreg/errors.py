"""Exception types shared across the package."""


class TvregError(Exception):
    """Base class for all errors raised by this package."""


class FormulaError(TvregError):
    """Base class for formula parsing/validation errors."""


class FormulaSyntaxError(FormulaError):
    """Malformed formula text.

    Carries the 0-based character ``position`` of the offending token and a
    message saying what was expected there.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"at position {position}: {message}")
        self.position = position


class DuplicateTermError(FormulaError):
    """The same column appears in more than one place in a formula.

    ``position`` is the offending token's 0-based character offset, or -1
    when the error arises outside a formula text (e.g. a data column whose
    name collides with a generated coefficient label).
    """

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class DoubleInterceptError(FormulaError):
    """More than one intercept (fixed or time-varying) was requested."""

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class BadPriorError(FormulaError):
    """A prior literal is unusable (non-finite mean or non-positive sd)."""

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class ModelError(TvregError):
    """Base class for model construction errors."""


class UnknownColumnError(ModelError):
    """A formula term or option names a column absent from the data."""


class LengthMismatchError(ModelError):
    """Data columns do not share a common length."""


class NonNumericColumnError(ModelError):
    """A predictor/response column could not be coerced to numbers."""


class NegativeCountError(ModelError):
    """An observed count response is negative or non-integer."""


class BadExposureError(ModelError):
    """An exposure column is missing, non-positive, or non-finite."""


class BadGammaError(ModelError):
    """A state-noise scaling sequence is non-positive or non-finite."""


class NumericalBreakdownError(TvregError):
    """Filtering produced a non-positive or non-finite innovation variance."""


class InitFailureError(TvregError):
    """No finite-posterior starting point was found for a chain."""


class DimensionMismatchError(TvregError):
    """Arrays handed to a diagnostic routine have incompatible shapes."""
