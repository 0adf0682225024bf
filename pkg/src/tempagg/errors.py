"""Exception types shared across the package."""


class TempAggError(Exception):
    """Base class for all errors raised by tempagg."""


class DimensionError(TempAggError, ValueError):
    pass


class NumericError(TempAggError, ArithmeticError):
    pass


class DataCoverageError(TempAggError):
    """Requested temporal scope contains no usable frames."""


class FeatureFileError(TempAggError):
    pass


class BadMagicError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class ShapeMismatchError(FeatureFileError):
    pass


class AnnotationError(TempAggError):
    pass


class CheckpointError(TempAggError):
    pass


class ConfigError(TempAggError):
    pass
