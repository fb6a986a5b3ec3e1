"""Exception hierarchy shared by all modules."""


class LegendreError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LegendreError, ValueError):
    """Malformed tensor, basis, or graph input.

    ``line`` is the 1-based line number of the offending input line, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(LegendreError, ArithmeticError):
    """A computation produced non-finite values or could not be carried out."""


class DivergenceError(NumericalError):
    """Iterates blew up; usually the learning rate is too large."""


class OracleError(LegendreError):
    """The iterative-scaling reference solver cannot proceed."""
