"""Exception taxonomy shared by every module."""


class BloError(Exception):
    """Base class for all library errors."""


class InvalidArgument(BloError, ValueError):
    """An argument is outside its documented range."""


class ConfigError(BloError, ValueError):
    """An experiment config failed validation (unknown key, bad range, bad file)."""


class DivergenceError(BloError):
    """An inner iterate or loss evaluation became non-finite.

    Carries the failing step index and the iterate norm at failure so that
    step-size problems can be diagnosed without re-running.
    """

    def __init__(self, message: str, step: int | None = None, norm: float | None = None):
        super().__init__(message)
        self.step = step
        self.norm = norm


class NotDifferentiable(BloError):
    """The problem does not expose the requested first/second-order oracle."""


class OracleTooLarge(BloError):
    """A dense oracle computation would exceed its configured size cap."""


class ReplayMismatch(BloError):
    """A stored trajectory does not reproduce under the recorded seeds."""


class NeumannDivergence(BloError):
    """The truncated Neumann iteration is growing instead of contracting."""
