"""Exception types raised across the package."""


class XbmError(Exception):
    """Base class for all package errors."""


class ShapeError(XbmError, ValueError):
    """Operand dimensions do not chain."""


class DegenerateInputError(XbmError, ValueError):
    """Input where the operation is undefined (e.g. a zero vector)."""


class ContractError(XbmError, RuntimeError):
    """A caller broke a usage contract (stale cache, oversized batch, ...)."""


class ConfigError(XbmError, ValueError):
    """Invalid configuration value."""


class StateError(XbmError, RuntimeError):
    """Operation not valid for the current state (e.g. empty memory)."""


class NumericError(XbmError, FloatingPointError):
    """Non-finite values produced despite safeguards."""


class FormatError(XbmError, ValueError):
    """Malformed binary file."""


class ParseError(XbmError, ValueError):
    """Malformed delimited-text file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
