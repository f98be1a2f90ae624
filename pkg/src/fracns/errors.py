"""Exception taxonomy shared by all fracns modules."""


class FracnsError(Exception):
    """Base class for all package errors."""


class ParameterError(FracnsError, ValueError):
    """A parameter is outside its admissible range."""


class DomainError(FracnsError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridMismatchError(FracnsError, ValueError):
    """Time grids or array shapes of coupled objects do not agree."""


class NumericalError(FracnsError, RuntimeError):
    """A numerical procedure failed to reach its accuracy target.

    Carries a ``diagnostics`` dict with whatever the failing routine knows
    (estimates, error bounds, iteration counts).
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class PicardNonConvergenceError(NumericalError):
    """Picard iteration exhausted max_iter; carries the residual history."""

    def __init__(self, message: str, residual_history, **diagnostics):
        super().__init__(message, residual_history=list(residual_history), **diagnostics)
        self.residual_history = list(residual_history)


class BlowUpError(NumericalError):
    """State norm crossed the blow-up guard threshold."""


class ValidationRefusedError(FracnsError, ValueError):
    """Solver refused a configuration that violates an exponent condition."""

    def __init__(self, message: str, failed_conditions):
        super().__init__(message)
        self.failed_conditions = list(failed_conditions)


class ConfigError(FracnsError, ValueError):
    """Configuration text failed to parse or validate.

    ``key`` and ``line`` identify the first offending entry.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
