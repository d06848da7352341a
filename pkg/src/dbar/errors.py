"""Exception hierarchy for dbar.

Every operation raises a named error so callers (and the CLI) can map
failures to exit codes without string matching.
"""


class DbarError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDomainError(DbarError, ValueError):
    """Domain constructor received a non-positive radius or extent."""


class InvalidInputError(DbarError, ValueError):
    """Operation received a field or mask it cannot work with."""


class UnsupportedExponentError(DbarError, ValueError):
    """Integrability exponent outside the range the operation supports."""


class ResolutionError(DbarError, ValueError):
    """Grid too coarse for the requested operation or parameter."""


class OutOfDomainError(DbarError, ValueError):
    """Requested coordinate lies outside the grid extent."""


class NonContractiveError(DbarError, RuntimeError):
    """Neumann iteration cannot contract (coefficient bound >= 1)."""


class DivergenceError(DbarError, RuntimeError):
    """Fixed-point iteration failed to converge within the budget."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ContractionViolationError(DbarError, ValueError):
    """Contraction constant times coefficient bound is not below 1/2."""

    def __init__(self, message, suggested_delta=None):
        super().__init__(message)
        self.suggested_delta = suggested_delta


class ContourThroughZeroError(DbarError, RuntimeError):
    """Winding contour passes through (numerical) zeros of the field."""


class IndeterminateOrderError(DbarError, RuntimeError):
    """Vanishing-order slope regression did not settle near an integer."""


class DegenerateChartError(DbarError, ValueError):
    """Zero chart unusable (identically collapsing roots)."""


class BoundednessViolationError(DbarError, ValueError):
    """Input violates a boundedness hypothesis."""


class NotSubharmonicError(DbarError, ValueError):
    """Discrete sub-mean-value test failed beyond tolerance."""


class StructureOutOfRangeError(DbarError, ValueError):
    """Almost complex structure matrix norm reaches 1 on the chart."""


class FormatError(DbarError, ValueError):
    """Malformed DBF1 container."""


class UnsupportedVersionError(FormatError):
    """DBF1 container written by an unknown format version."""


class SchemaError(DbarError, ValueError):
    """Scenario configuration violates the config schema."""
