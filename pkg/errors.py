from typing import Any, Dict, Optional


class ReadoutError(Exception):
    """Base class for all errors raised by the readout toolkit."""


class DomainError(ReadoutError, ValueError):
    """Input outside the domain of a physical formula or statistic."""


class ConfigError(DomainError):
    """Configuration validation failure, located by a dotted field path."""

    def __init__(self, message: str, field_path: str = "", line: Optional[int] = None):
        self.field_path = field_path
        self.line = line
        location = field_path
        if line is not None:
            location = f"{location} (line {line})" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class NotFoundError(ReadoutError, LookupError):
    """Requested table row, Raman target or preset does not exist."""


class NumericalError(ReadoutError, ArithmeticError):
    """A numerical routine failed to converge or overflowed."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
            message = f"{message} [{details}]"
        super().__init__(message)


class FitError(NumericalError):
    """Histogram cannot be fitted (empty or degenerate likelihood)."""
