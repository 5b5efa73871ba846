"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class StpconvError(Exception):
    exit_code = 2


class ConfigError(StpconvError, ValueError):
    exit_code = 1


class ShapeError(StpconvError, ValueError):
    exit_code = 2


class DataError(StpconvError):
    exit_code = 2


class BlockFormatError(DataError):
    """Malformed block file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CoverageError(DataError):
    pass


class EmptyTargetError(DataError):
    pass


class StaleCacheError(StpconvError, RuntimeError):
    pass


class NumericalError(StpconvError, ArithmeticError):
    exit_code = 3
