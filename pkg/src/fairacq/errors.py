"""Exception hierarchy. Each top-level family maps to one CLI exit code."""


class FairAcqError(Exception):
    exit_code = 1


class ConfigError(FairAcqError):
    exit_code = 2


class DataError(FairAcqError):
    exit_code = 3


class MissingFileError(DataError, FileNotFoundError):
    pass


class SchemaError(DataError):
    pass


class EncodingError(DataError):
    pass


class RowError(DataError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyDatasetError(DataError):
    pass


class SplitError(DataError):
    pass


class GroupError(DataError):
    """A sensitive group (or label class) needed for a statistic is absent."""


class NumericError(FairAcqError):
    exit_code = 4


class OptimizationError(NumericError):
    pass


class ArmExhausted(FairAcqError):
    """Raised by a sampler when an arm cannot supply a full batch."""
