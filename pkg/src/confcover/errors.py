"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and numerical
failures from :class:`NumericalError`; the CLI maps them to exit codes 1 and 2.
"""


class ConfcoverError(Exception):
    """Base class for all package errors."""


class ValidationError(ConfcoverError, ValueError):
    pass


class NumericalError(ConfcoverError, RuntimeError):
    pass


class EmptyDomain(ValidationError):
    pass


class Disconnected(ValidationError):
    pass


class MarginViolation(ValidationError):
    pass


class EmptyTarget(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class LevelsIncomplete(ValidationError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, max_iter, residual, message=None):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(
            message or f"no convergence after {max_iter} iterations (residual {residual:.3e})"
        )


class BudgetExhausted(NumericalError):
    """Walk reached ``t_max`` before covering; ``partial`` holds the CoverResult."""

    def __init__(self, partial):
        self.partial = partial
        super().__init__(f"step budget exhausted after {partial.trajectory_length} steps")


class LevelCapReached(NumericalError):
    def __init__(self, partial):
        self.partial = partial
        super().__init__("level cap reached before the target was covered")


class InsufficientSamples(NumericalError):
    pass


class InequalityViolated(NumericalError):
    def __init__(self, message, counterexample=None):
        self.counterexample = counterexample
        super().__init__(message)


class BoundViolated(InequalityViolated):
    pass
