"""Exception hierarchy.

Two families: ``ValidationError`` for rejected input (CLI exit code 2) and
``NumericalError`` for solver/fit failures (CLI exit code 3).
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class DomainError(ValidationError):
    pass


class SamplingError(ValidationError):
    pass


class TimingError(ValidationError):
    def __init__(self, message, deficit=None):
        super().__init__(message)
        self.deficit = deficit


class NumericalError(RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


class IntegrationError(NumericalError):
    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class AmbiguityError(NumericalError):
    def __init__(self, message, nullity=None):
        super().__init__(message)
        self.nullity = nullity


class QuadratureError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BracketError(NumericalError):
    pass


class ExtrapolationError(NumericalError):
    pass


class UnidentifiableError(NumericalError):
    pass


class ResolutionError(NumericalError):
    pass
