"""Exception hierarchy shared across the package.

Split by how the CLI maps failures to exit codes: configuration and
problem-definition errors (exit 2) versus numerical failures during a
run (exit 3).
"""


class FlexAladinError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(FlexAladinError, ValueError):
    """Invalid user input: configs, problem files, parameter ranges."""


class DimensionMismatchError(ValidationError):
    """Vector or matrix shapes do not match the declared dimensions."""


class ProblemFormatError(ValidationError):
    """A problem definition violates an invariant; carries the failing field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(ValidationError):
    """A run configuration failed validation; carries the failing field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalError(FlexAladinError, RuntimeError):
    """Base class for numerical failures during solves."""


class CapabilityError(FlexAladinError, TypeError):
    """An operation was requested that the objective family does not support."""


class OracleError(NumericalError):
    """A centralized oracle solve failed (non-convergence, singular KKT)."""


class LocalSolveError(NumericalError):
    """An agent subproblem solve did not reach tolerance; carries the best iterate."""

    def __init__(self, message: str, best_x=None, residual: float | None = None):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual


class EngineError(NumericalError):
    """A solver engine failed; carries iteration and agent context."""

    def __init__(self, message: str, iteration: int | None = None, agent: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.agent = agent
