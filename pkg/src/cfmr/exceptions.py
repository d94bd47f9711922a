"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 validation, 2 data/format, 3 numerical failure.
"""


class CFMRError(Exception):
    exit_code = 1


class ValidationError(CFMRError, ValueError):
    """Bad configuration or argument values."""


class DimensionError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class InputError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class UsageError(CFMRError, RuntimeError):
    """API called out of order (e.g. backward without a recorded forward)."""


class DataError(CFMRError):
    exit_code = 2


class FormatError(DataError):
    """Wrong magic bytes, version, or field layout in a binary file."""


class CorruptionError(DataError):
    """Truncated payload or header/body disagreement."""


class IngestionError(DataError):
    pass


class StaleIndexError(DataError):
    """Index was built by a different model than the one answering queries."""


class SpecError(DataError):
    """Synthetic corpus spec cannot be realized."""


class NumericalError(CFMRError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
