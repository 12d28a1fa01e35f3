"""Exception hierarchy for the ECG classification pipeline."""


class CardioraError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CardioraError, ValueError):
    """Tensor or parameter shapes do not agree."""


class ConfigError(CardioraError, ValueError):
    """A configuration value violates its invariant."""


class InputError(CardioraError, ValueError):
    """Input data is invalid (labels, generator parameters, prevalences, records)."""


class NumericError(CardioraError, ArithmeticError):
    """Non-finite values were produced or received."""


class OpOrderError(CardioraError, RuntimeError):
    """Backward was requested for an op whose forward never ran."""


class FileFormatError(CardioraError, ValueError):
    """A binary file has the wrong magic bytes or version."""


class TruncatedFileError(FileFormatError):
    """A binary file ended before all declared content was read."""


class ConfigMismatchError(ConfigError):
    """Stored weights were built for a different architecture or preprocessing."""


class InsufficientDataError(CardioraError, ValueError):
    """Not enough samples to compute a statistic."""


class UndefinedMetricError(CardioraError, ValueError):
    """A metric is undefined for the given labels (e.g. no positives)."""


class OutDirLockedError(CardioraError, RuntimeError):
    """Another process owns the output directory."""
