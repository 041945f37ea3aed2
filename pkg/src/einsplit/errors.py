"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user input: bad counts, missing files, inconsistent options."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, divergence, blow-up)."""


class SingularSystemError(NumericalError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class DivergenceError(NumericalError):
    """Newton iteration did not reach tolerance.

    ``history`` holds the update norms of every iteration, ``step`` the time
    step index when raised from a time loop.
    """

    def __init__(self, message, history=(), step=None):
        super().__init__(message)
        self.history = list(history)
        self.step = step
