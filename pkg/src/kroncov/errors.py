"""Exception hierarchy. Each family maps to a CLI exit code."""


class KronCovError(Exception):
    exit_code = 1


class ConfigError(KronCovError):
    exit_code = 2


class DataError(KronCovError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    pass


class NumericalError(KronCovError, ArithmeticError):
    exit_code = 4


class NotPositiveDefiniteError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, message, mode=None, block=None):
        super().__init__(message)
        self.mode = mode
        self.block = block


class DegenerateSampleError(NumericalError):
    pass


class SizeLimitError(KronCovError):
    exit_code = 3
