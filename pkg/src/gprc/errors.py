"""Exception hierarchy shared by all gprc modules."""


class GprcError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(GprcError, ValueError):
    """Invalid argument or configuration value."""


class MissingFieldError(GprcError, KeyError):
    """A derivative functional needed for evaluation was not supplied."""

    def __init__(self, index, where=""):
        self.index = index
        msg = f"missing field for multi-index {tuple(index)}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class DimensionError(GprcError, ValueError):
    """Point or multi-index dimension does not match the problem dimension."""


class OrderError(GprcError, ValueError):
    """Requested derivative order exceeds the supported maximum."""


class GridError(GprcError, ValueError):
    """Two field estimates (or an estimate and a point set) do not share a grid."""


class IllConditionedError(GprcError, ArithmeticError):
    """Covariance factorization failed or produced a clearly negative variance."""

    def __init__(self, msg, pivot=None):
        self.pivot = pivot
        if pivot is not None:
            msg = f"{msg} (smallest pivot {pivot:.3e})"
        super().__init__(msg)


class TrainingError(GprcError, RuntimeError):
    """Hyperparameter optimization failed from every starting point."""


class SolverBlowupError(GprcError, ArithmeticError):
    """A reference solver produced a non-finite or exploding state."""

    def __init__(self, msg, index=None):
        self.index = index
        if index is not None:
            msg = f"{msg} at time index {index}"
        super().__init__(msg)
