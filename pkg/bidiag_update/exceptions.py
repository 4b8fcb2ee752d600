from typing import Any, Optional


class BidiagError(Exception):
    """Base class for every error raised by the bidiag_update package."""


class ValidationError(BidiagError, ValueError):
    """
    Invalid input: shapes that do not agree, ranks out of range, non-finite
    data, calls made out of order.
    """


class ParseError(ValidationError):
    """
    A matrix, vector or stream file could not be read.

    Attributes:
        path (str): File being parsed.
        line (Optional[int]): 1-based line of the first offending record, when known.
    """

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = path
        self.line = line
        location = path
        if line is not None:
            location = f"{path}:{line}"
        super().__init__(f"{location}: {message}" if location else message)


class NumericalError(BidiagError, ArithmeticError):
    """
    A kernel produced non-finite values or lost the structure it maintains.

    Attributes:
        step (Optional[int]): Step or rotation index at which the failure was detected.
    """

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)


class ConvergenceError(NumericalError):
    """
    An iterative method hit its sweep limit.

    Attributes:
        best (Any): Best iterate reached before giving up.
        sweeps (int): Number of sweeps performed.
    """

    def __init__(self, message: str, best: Any = None, sweeps: int = 0):
        self.best = best
        self.sweeps = sweeps
        super().__init__(message, step=sweeps)
