# errors.py - Exception hierarchy for the CBNE solver
"""
All solver errors derive from CBNEError so the CLI can map them to a clean
non-zero exit. Each concrete error also subclasses the builtin it refines
(ValueError / RuntimeError) so plain `except ValueError` keeps working.
"""

from typing import Any, Dict, List, Optional


class CBNEError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CBNEError, ValueError):
    """A point lies outside its box."""

    def __init__(self, message: str, coordinate: Optional[int] = None, value: Optional[float] = None):
        super().__init__(message)
        self.coordinate = coordinate
        self.value = value


class ConditioningError(CBNEError, ValueError):
    """Conditional density requested where the own-type marginal vanishes."""


class ShapeError(CBNEError, ValueError):
    pass


class ConfigError(CBNEError, ValueError):
    """Game file or run configuration is invalid. `paths` holds dotted key paths."""

    def __init__(self, message: str, paths: Optional[List[str]] = None):
        super().__init__(message)
        self.paths = paths or []


class CertificationError(CBNEError, RuntimeError):
    """Strong concavity could not be certified."""


class ConvergenceError(CBNEError, RuntimeError):
    """An iteration cap was hit before the stopping rule fired."""

    def __init__(self, message: str, residual: float = float("nan"), trace: Optional[List[float]] = None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace or [])


class OrderConditionError(CBNEError, RuntimeError):
    """The lattice structure needed by the monotone iteration is missing."""


class AssumptionViolation(CBNEError, ValueError):
    pass


class SupportMismatch(CBNEError, ValueError):
    pass


class TransportSizeError(CBNEError, ValueError):
    pass


class PropertyViolation(CBNEError, AssertionError):
    """A sampled inequality failed. `witness` holds the offending tuple."""

    def __init__(self, message: str, witness: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.witness = witness or {}
