"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operands have incompatible matrix dimensions."""


class NotHermitianError(ValueError):
    """Input deviates from its conjugate transpose beyond tolerance."""


class NotHPDError(ValueError):
    """Input is not numerically Hermitian positive-definite."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate and its residual are kept so callers can inspect
    or reuse them.
    """

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class SingularSystemError(RuntimeError):
    """A linear system is too ill-conditioned to solve reliably."""
