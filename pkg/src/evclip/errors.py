"""Exception hierarchy shared by every module."""


class EvclipError(Exception):
    """Base class; ``exit_code`` is what the command line returns for it."""

    exit_code = 1


class ConfigError(EvclipError, ValueError):
    exit_code = 2


class DataError(EvclipError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    pass


class NumericalError(EvclipError, ArithmeticError):
    exit_code = 4
