"""Exception hierarchy with stable CLI exit codes.

Exit code contract: 0 success, 1 usage/config error, 2 data error,
3 runtime/numeric failure.
"""


class TnvaeError(Exception):
    exit_code = 3


class UsageError(TnvaeError):
    """An operation was called in a way its contract forbids."""

    exit_code = 1


class ConfigError(UsageError):
    """A configuration value is missing, malformed, or out of domain."""


class ShapeError(UsageError):
    """Array dimensions do not match the operation's requirements."""


class DataError(TnvaeError):
    """Input data is unreadable, inconsistent, or incomplete."""

    exit_code = 2


class DegenerateError(DataError):
    """Input is degenerate for the requested computation (e.g. zero norm)."""


class NumericError(TnvaeError):
    """A numerical computation produced non-finite values."""

    exit_code = 3
