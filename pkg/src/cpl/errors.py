"""Exception hierarchy.  CLI exit codes key off these classes."""


class CPLError(Exception):
    """Base class for all library errors."""


class ConfigError(CPLError):
    """Invalid configuration value or combination."""


class DataError(CPLError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class VocabularyError(DataError):
    """Unknown symbol under a frozen vocabulary."""


class LifecycleError(CPLError):
    """Operation called in the wrong state (double resolve, stale tape, ...)."""


class DimensionError(CPLError):
    """Shape disagreement between operands."""


class NumericError(CPLError):
    """NaN or infinity encountered."""


class GenerationError(CPLError):
    """Synthetic dataset specification cannot be realised."""


class MetricError(CPLError):
    """Metric undefined for the given input."""
