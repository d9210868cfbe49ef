"""Exception types shared across the package."""


class XmposeError(Exception):
    """Base class for every error raised by this package."""


class ContractError(XmposeError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor or vector shapes do not agree."""


class NonFiniteError(ContractError):
    """A NaN or Inf reached a place where it must not propagate."""


class CheiralityError(ContractError):
    """A point lies on or behind the camera plane."""


class SolverFailure(XmposeError):
    """Iterative refinement diverged; ``best_pose`` holds the best estimate seen."""

    def __init__(self, message, best_pose=None):
        super().__init__(message)
        self.best_pose = best_pose


class DatasetError(XmposeError, OSError):
    """A dataset or checkpoint file is missing, truncated or malformed."""
