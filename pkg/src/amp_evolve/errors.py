"""Exception hierarchy shared by every module."""


class AmpEvolveError(Exception):
    """Base class for all package errors."""


class InvalidInput(AmpEvolveError, ValueError):
    pass


class Unsupported(AmpEvolveError, ValueError):
    pass


class DegenerateDistribution(AmpEvolveError, ValueError):
    pass


class InvalidSpec(AmpEvolveError, ValueError):
    pass


class NumericalFailure(AmpEvolveError, ArithmeticError):
    """Non-finite or runaway values. ``iteration`` is set when raised from an AMP run."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class RankDeficient(AmpEvolveError, ArithmeticError):
    pass


class InconsistentConstraints(AmpEvolveError, ValueError):
    pass


class BoundViolation(AmpEvolveError, ValueError):
    pass
