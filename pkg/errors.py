"""
Author: Perry Radau
Date: 2025-03-02
Brief description: Exception types shared by the forecasting pipeline
Dependencies: Python 3.8+
Usage: raise ConfigError(...), except AdaptcastError
"""

from typing import List, Optional


class AdaptcastError(ValueError):
    """Base class for all pipeline errors.

    Subclasses ValueError so callers that already catch ValueError keep working.
    """


class ParseError(AdaptcastError):
    """Malformed CSV row."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(AdaptcastError):
    """CSV header does not match the expected feature schema."""


class IntegrityError(AdaptcastError):
    """Data violates a structural invariant (duplicate days, ids, ...)."""


class ConfigError(AdaptcastError):
    """Invalid configuration.

    Attributes:
        field: Name of the offending configuration key (first violation)
        violations: Every violation found, as human readable strings
    """

    def __init__(self, message: str, field: Optional[str] = None,
                 violations: Optional[List[str]] = None):
        self.field = field
        self.violations = list(violations) if violations else [message]
        super().__init__(message)

    def to_dict(self) -> dict:
        """Machine-readable form used by the CLI error channel."""
        return {
            'error': 'config',
            'field': self.field,
            'message': str(self),
            'violations': self.violations,
        }


class StateError(AdaptcastError):
    """Object used before it was fitted or initialized."""


class StageError(AdaptcastError):
    """Preprocessing stage applied out of order."""


class ShapeError(AdaptcastError):
    """Tensor shapes incompatible for a primitive."""


class ContractError(AdaptcastError):
    """Caller broke a documented precondition."""


class OptimizerError(AdaptcastError):
    """Non-finite gradient reached the optimizer."""

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        super().__init__(message)


class LabelError(AdaptcastError):
    """Domain label outside the classifier's range."""


class ImputationError(AdaptcastError):
    """Column cannot be imputed (no observed value)."""

    def __init__(self, message: str, column: Optional[str] = None):
        self.column = column
        super().__init__(message)


class FoldError(AdaptcastError):
    """Every LOOCV fold failed."""
