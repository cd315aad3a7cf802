"""Exception hierarchy shared by all modules."""


class RotcomposeError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(RotcomposeError):
    """An argument breaks a documented precondition (shape, length, range)."""


class NumericError(RotcomposeError):
    """A non-finite value appeared where finite numbers are required."""


class FormatError(RotcomposeError):
    """A file on disk does not match its declared format."""


class ConfigError(RotcomposeError):
    """A configuration value is invalid or inconsistent."""


class UsageError(RotcomposeError):
    """Bad command-line invocation."""
