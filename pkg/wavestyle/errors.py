"""Exception types raised across :mod:`wavestyle`.

Every error is still catchable as the builtin family it refines, so callers that only
care about "a bad value" can keep catching :class:`ValueError`.
"""

from typing import Any, Optional

__all__ = [
    "WavestyleError",
    "ParameterError",
    "InputTooShortError",
    "ShapeError",
    "GraphError",
    "FormatError",
    "ParseError",
    "ValidationError",
    "StateError",
    "NumericalError",
    "StageError",
]


class WavestyleError(Exception):
    """Base class of all errors raised by wavestyle."""


class ParameterError(WavestyleError, ValueError):
    """An argument or configuration value is outside its allowed range."""


class InputTooShortError(ParameterError):
    """A clip does not contain enough samples for a single analysis frame."""


class ShapeError(ParameterError):
    """Tensor shapes do not line up."""


class GraphError(ShapeError):
    """A computation graph could not be built."""


class FormatError(WavestyleError, ValueError):
    """A WAV file uses a codec, bit depth or channel count we do not read."""


class ParseError(WavestyleError, ValueError):
    """A WAV file is malformed or truncated."""


class ValidationError(WavestyleError, ValueError):
    """A value violates an invariant (e.g. it contains NaN)."""


class StateError(WavestyleError, RuntimeError):
    """An operation was called out of order."""


class NumericalError(WavestyleError, ArithmeticError):
    """The optimization produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int, report: Optional[Any] = None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report


class StageError(WavestyleError):
    """Wraps a failure with the name of the pipeline stage it happened in."""

    def __init__(self, stage: str, error: BaseException):
        super().__init__("%s: %s" % (stage, error))
        self.stage = stage
        self.error = error
