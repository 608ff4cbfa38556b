"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line layer can map it
without a lookup table: 2 for configuration/usage, 3 for data quality,
4 for numerical failure.
"""


class InertiaKitError(Exception):
    exit_code = 1


class InvalidInputError(InertiaKitError, ValueError):
    """Malformed numeric input (non-finite values, non-orthonormal matrices)."""

    exit_code = 2


class ConfigError(InertiaKitError, ValueError):
    exit_code = 2


class ShapeError(InertiaKitError, ValueError):
    exit_code = 2


class DataQualityError(InertiaKitError):
    exit_code = 3


class InsufficientDataError(DataQualityError):
    pass


class InvalidStreamError(DataQualityError):
    pass


class FormatError(DataQualityError):
    pass


class InsufficientOverlapError(DataQualityError):
    pass


class GapError(DataQualityError):
    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class AlignmentError(DataQualityError):
    pass


class DegenerateMotionError(DataQualityError):
    pass


class IllConditionedSegmentError(DataQualityError):
    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


class StreamError(DataQualityError):
    pass


class EmptyEvaluationError(DataQualityError):
    pass


class NumericalError(InertiaKitError):
    exit_code = 4


class DivergenceError(NumericalError):
    def __init__(self, msg, checkpoint=None, epoch=None):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.epoch = epoch


class UndefinedMetricError(NumericalError):
    pass


class GradientCheckError(NumericalError):
    def __init__(self, msg, failures=None):
        super().__init__(msg)
        self.failures = failures or {}
