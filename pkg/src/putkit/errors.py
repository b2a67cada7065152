"""Exception hierarchy shared by every putkit module."""


class PutkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidDistribution(PutkitError, ValueError):
    """A probability vector or stochastic matrix violates its invariants."""


class AlphabetMismatch(PutkitError, ValueError):
    """Two objects that must share an alphabet do not."""


class NoConvergence(PutkitError, RuntimeError):
    """An iterative solver exhausted its budget before certifying its tolerance.

    The partial result is kept on ``result`` so callers can still inspect it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class GridTooLarge(PutkitError, ValueError):
    """A brute-force grid would exceed the evaluation cap."""


class VacuousBound(PutkitError, ArithmeticError):
    """The Berry-Esseen correction leaves the Gaussian quantile argument outside (0, 1).

    ``argument`` holds the offending quantile argument and ``kind`` is
    ``"low"`` (argument <= 0) or ``"high"`` (argument >= 1).
    """

    def __init__(self, message, argument=float("nan"), kind="low"):
        super().__init__(message)
        self.argument = argument
        self.kind = kind


class DivisionBySupportZero(PutkitError, ZeroDivisionError):
    """A perturbation column is nonzero where the base distribution has no mass."""


class SingularWeight(PutkitError, ZeroDivisionError):
    """A quadratic form weight 1/Q(w) is infinite on a term with nonzero numerator."""


class ConfigError(PutkitError, ValueError):
    """A problem configuration file is malformed; ``path`` locates the offending entry."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
