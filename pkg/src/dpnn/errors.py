"""Exception hierarchy shared by every module.

The CLI maps each subclass to its own exit code, so new error kinds should
subclass one of these rather than ``DpnnError`` directly.
"""


class DpnnError(Exception):
    """Base class for all package errors."""


class ShapeError(DpnnError, ValueError):
    pass


class NumericError(DpnnError, ArithmeticError):
    pass


class DomainError(DpnnError, ValueError):
    pass


class ValidationError(DpnnError, ValueError):
    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(DpnnError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(DpnnError, ValueError):
    """Corrupt, tampered or version-mismatched serialized artifact."""
