"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PadaError(Exception):
    exit_code = 1


class ConfigError(PadaError, ValueError):
    """Invalid configuration: bad key, type, or out-of-range value."""

    exit_code = 1


class UsageError(PadaError, RuntimeError):
    """An API contract was violated by the caller (stale cache, mismatched specs, ...)."""

    exit_code = 1


class NumericError(PadaError, ArithmeticError):
    exit_code = 2


class InsufficientSamplesError(PadaError, ValueError):
    exit_code = 2


class ParseError(PadaError, IOError):
    """A binary or text artifact could not be decoded."""

    exit_code = 3


class SearchError(PadaError, RuntimeError):
    exit_code = 2
