"""Exception types shared across the package."""


class DilarError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DilarError, ValueError):
    pass


class UnsupportedOperation(DilarError, TypeError):
    """Raised when a differentiated computation uses a primitive the tape does not know."""


class NumericalDivergence(DilarError, ArithmeticError):
    """A rollout produced a non-finite state.

    ``step`` is the index of the step whose result was non-finite and
    ``last_state`` the last finite state reached before it.
    """

    def __init__(self, step, last_state=None, message=None):
        self.step = int(step)
        self.last_state = last_state
        super().__init__(message or f"rollout diverged at step {self.step}")


class DegenerateGradient(InvalidArgument):
    pass


class NotInCone(InvalidArgument):
    pass


class DegenerateChannel(InvalidArgument):
    def __init__(self, channel, variance):
        self.channel = channel
        self.variance = variance
        super().__init__(f"channel {channel!r} is constant (variance {variance:.3g})")


class DataError(DilarError, ValueError):
    pass


class FitFailure(DilarError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
