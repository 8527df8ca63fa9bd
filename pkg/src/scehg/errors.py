"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the command line
front end can print a parsable single-line failure.
"""


class ScehgError(Exception):
    code = "ERROR"


class InvalidInputError(ScehgError, ValueError):
    code = "INVALID_INPUT"


class DimensionMismatchError(InvalidInputError):
    code = "DIMENSION_MISMATCH"


class ParseError(InvalidInputError):
    code = "PARSE_ERROR"


class EmptyInputError(InvalidInputError):
    code = "EMPTY_INPUT"


class InsufficientSamplesError(InvalidInputError):
    code = "INSUFFICIENT_SAMPLES"


class NotPositiveDefiniteError(ScehgError, ValueError):
    code = "NOT_POSITIVE_DEFINITE"

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(ScehgError, RuntimeError):
    """Raised when an iterative solver exhausts its budget.

    The last iterate is kept on ``last_iterate`` so callers can still use it.
    """

    code = "CONVERGENCE_FAILURE"

    def __init__(self, message, last_iterate=None, n_iter=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter


class NoValidComboError(ScehgError):
    code = "NO_VALID_COMBO"

    def __init__(self, message, reasons=None):
        super().__init__(message)
        self.reasons = reasons or {}
