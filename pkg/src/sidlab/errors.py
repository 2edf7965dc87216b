"""Exception types raised across sidlab."""


class SidlabError(Exception):
    """Base class for all sidlab errors."""


class UsageError(SidlabError, ValueError):
    """Arguments violate an operation's preconditions."""


class NonFiniteInputError(UsageError):
    """A point with NaN or infinite coordinates was passed in."""


class ConfigurationError(SidlabError, ValueError):
    """An experiment, grid or simulation configuration is invalid."""


class BudgetError(ConfigurationError):
    """The requested run exceeds the step budget or cannot observe its target window."""


class ExplosionError(SidlabError, FloatingPointError):
    """The Euler scheme produced non-finite coordinates."""

    def __init__(self, step, t=None, message=None):
        self.step = int(step)
        self.t = t
        msg = message or f"non-finite state at step {self.step}"
        if t is not None:
            msg += f" (t={t:.6g})"
        super().__init__(msg)


class AccuracyError(SidlabError, ArithmeticError):
    """Step-halving refinement did not reach the requested tolerance."""


class GridCoverageError(SidlabError, ValueError):
    """The density grid does not cover the bulk of the Gibbs measure."""


class NonConvergenceError(SidlabError, RuntimeError):
    """A fixed-point iteration hit its iteration cap."""

    def __init__(self, message, last_residual):
        self.last_residual = float(last_residual)
        super().__init__(f"{message} (last residual {self.last_residual:.3e})")


class ContractionError(SidlabError, ValueError):
    """The contracted domain is empty because delta is too large for the exit cost."""
