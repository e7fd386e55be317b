"""Exception hierarchy shared across the package."""


class DacError(Exception):
    pass


class InvalidInputError(DacError, ValueError):
    pass


class InvalidTargetError(InvalidInputError):
    pass


class ConfigurationError(DacError, ValueError):
    pass


class AbstentionSaturationError(DacError, ArithmeticError):
    """Raised when p_abstain >= 1 - EPS_ABST, where the loss is undefined."""


class NumericFailureError(DacError, ArithmeticError):
    pass


class SchedulerPhaseError(DacError, RuntimeError):
    pass


class SequencingError(DacError, RuntimeError):
    pass


class HaltedRunError(DacError):
    """A training run stopped on a numeric failure.

    ``stats`` holds the completed epochs and ``model`` the parameters at the halt.
    """

    def __init__(self, message, stats=None, model=None):
        super().__init__(message)
        self.stats = list(stats or [])
        self.model = model


class EmptyTrainingSetError(DacError):
    pass


class FormatError(DacError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    pass


class DimensionMismatchError(DacError, ValueError):
    pass
