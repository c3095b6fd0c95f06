"""Exception hierarchy shared across the package.

The command line driver maps these onto process exit codes, so new
exception types should subclass one of the three roots below.
"""


class GraphmixError(Exception):
    """Base class for all package errors."""


class ConfigError(GraphmixError):
    """Invalid configuration or usage (CLI exit code 2)."""


class DataError(GraphmixError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class ParseError(DataError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class IntegrityError(DataError):
    """Structurally valid input that violates a cross-record constraint."""


class FormatError(DataError):
    """Bad magic bytes, version mismatch or truncation in a binary file."""


class NumericalError(GraphmixError):
    """Numerical failure during training or inference (CLI exit code 4)."""
