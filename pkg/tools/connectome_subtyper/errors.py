"""Exception types shared by every module of the subtyping toolkit.

The CLI maps these onto exit codes: validation problems exit with 1,
numerical breakdowns with 2.
"""

from typing import Any, Optional, Sequence


class SubtyperError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SubtyperError):
    """Input data, configuration or document failed validation.

    Args:
        message: Human readable description of the problem.
        location: Optional position of the offending value, e.g. a tensor
            index ``(i, m, v, v')`` or a JSON field path ``"state.zeta"``.
    """

    def __init__(self, message: str, location: Optional[Any] = None):
        self.location = location
        self.message = message
        if location is not None:
            super().__init__(f"{message} (at {_format_location(location)})")
        else:
            super().__init__(message)

    def __reduce__(self):
        return self.__class__, (self.message, self.location)


class SchemaError(ValidationError):
    """A persisted JSON document does not match its schema."""


class DomainError(ValidationError, ValueError):
    """A special function was evaluated outside its domain."""


class NumericalError(SubtyperError):
    """A quantity that must be finite is not.

    Args:
        message: Description of the failure.
        term: Name of the offending term (e.g. ``"theta1"`` for the ELBO
            contribution of the informative parameters).
    """

    def __init__(self, message: str, term: Optional[str] = None):
        self.term = term
        self.message = message
        if term is not None:
            super().__init__(f"{message} [term: {term}]")
        else:
            super().__init__(message)

    def __reduce__(self):
        return self.__class__, (self.message, self.term)


def _format_location(location: Any) -> str:
    if isinstance(location, str):
        return location
    if isinstance(location, Sequence):
        return '(' + ', '.join(str(x) for x in location) + ')'
    return str(location)
