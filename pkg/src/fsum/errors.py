"""Exception hierarchy.

Each top-level family maps to a CLI exit code: configuration problems exit
with 2, backend/transport problems with 3 and bad input data with 4.
"""


class FsumError(Exception):
    exit_code = 1


class ConfigError(FsumError):
    exit_code = 2


class BackendError(FsumError):
    """A caption or embedding provider failed."""

    exit_code = 3

    def __init__(self, message, cause=None):
        super().__init__(message)
        self.cause = cause


class MalformedResponseError(BackendError):
    def __init__(self, message, raw_reply=None):
        super().__init__(message)
        self.raw_reply = raw_reply


class CapabilityError(BackendError):
    """The configured backend cannot provide what was asked (e.g. log-likelihoods)."""


class DataError(FsumError, ValueError):
    exit_code = 4


class DimensionError(DataError):
    pass


class BoundsError(DataError):
    pass


class ShapeError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class AlignmentError(DataError):
    pass


class CoverageError(DataError):
    pass


class UndefinedCorrelationError(DataError):
    pass
