"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for dimension and argument validation; the
classes here mark domain events a caller may want to catch and handle.
"""


class AccessDeniedError(RuntimeError):
    """A labels-only simulator was asked for class probabilities."""


class BudgetExhaustedError(RuntimeError):
    """An evaluation or draw budget ran out before the operation finished.

    ``accepted`` carries the partial result count when the operation was
    accumulating acceptances (rejection sampling).
    """

    def __init__(self, message: str, used: int = 0, limit: int | None = None,
                 accepted: int | None = None):
        super().__init__(message)
        self.used = used
        self.limit = limit
        self.accepted = accepted


class EvaluationError(RuntimeError):
    """A candidate produced a missing or non-finite objective value."""


class NumericalBreakdownError(RuntimeError):
    """Covariance decomposition failed even after eigenvalue repair."""


class DegenerateWeightsError(RuntimeError):
    """Importance weights collapsed to an unusable (non-finite or all-zero) state."""


class StagnationError(RuntimeError):
    """A particle exceeded its proposal attempt limit at the current tolerance."""

    def __init__(self, message: str, iteration: int, epsilon: float, attempts: int):
        super().__init__(message)
        self.iteration = iteration
        self.epsilon = epsilon
        self.attempts = attempts


class ProtocolError(RuntimeError):
    """The external simulator protocol was violated (handshake, framing, content)."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` holds the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
