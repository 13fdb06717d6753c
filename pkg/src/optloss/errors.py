"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI reports for it.
"""


class OptLossError(Exception):
    exit_code = 1


class FormatError(OptLossError):
    exit_code = 2


class DataError(OptLossError):
    exit_code = 2


class IoError(OptLossError):
    exit_code = 2


class InputError(OptLossError):
    exit_code = 3


class SpecError(OptLossError):
    exit_code = 3


class ConfigError(OptLossError):
    exit_code = 3


class UnsupportedError(OptLossError):
    exit_code = 3


class AlignmentError(OptLossError):
    exit_code = 3


class OffsetError(OptLossError):
    exit_code = 3


class DegenerateFitError(OptLossError):
    exit_code = 3


class NoCriticalPointError(OptLossError):
    exit_code = 3


class DomainError(OptLossError, ValueError):
    exit_code = 4


class ExtrapolationError(DomainError):
    pass
