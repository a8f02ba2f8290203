"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent model/configuration (e.g. dimension mismatch)."""


class InputError(ValueError):
    """Input violates a documented precondition."""


class NumericsError(ArithmeticError):
    """Numerical failure (singular / non-PD matrix, overflow)."""


class ResourceLimitError(RuntimeError):
    """Problem size exceeds a configured cap."""


class UnobservableHypothesisError(NumericsError):
    """Stacked information matrix is singular; hypothesis has no full-state MLE."""


class DegenerateBeliefError(NumericsError):
    """Belief or message normalization constant is not positive."""


class InconsistentTransformError(InputError):
    """Transformed residual falls outside the range of the transformed covariance."""
