"""Shared exception types."""


class ConfigError(Exception):
    """Invalid or inconsistent configuration input."""


class NonConvergenceError(RuntimeError):
    """An iterative solve exhausted its iteration budget.

    Carries the last iterate and residual norm so callers can report
    diagnostics or retry with a different step size.
    """

    def __init__(self, message, last_iterate=None, residual_norm=None,
                 iterations=None, step_index=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.step_index = step_index


class SingularSystemError(RuntimeError):
    """A linear system inside a Newton iteration is numerically singular."""
