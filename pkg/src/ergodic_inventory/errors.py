"""Exception hierarchy for the inventory control toolkit.

The CLI maps these onto its exit-code contract: configuration and validation
problems exit with 2, numeric and simulation failures with 3 and certificate
failures with 4.
"""

from typing import Any, Dict, List, Optional


class InventoryControlError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(InventoryControlError):
    """Configuration could not be parsed or failed validation."""

    exit_code = 2


class DomainError(InventoryControlError, ValueError):
    """An argument lies outside the domain of the operation (e.g. s >= S)."""

    exit_code = 2


class NumericFailure(InventoryControlError):
    """A quadrature or ODE solve did not reach the requested tolerance."""

    exit_code = 3

    def __init__(self, message: str, error_estimate: Optional[float] = None):
        """Initialize the failure.

        Args:
            message: Human-readable description
            error_estimate: Achieved error estimate, when one is available
        """
        super().__init__(message)
        self.error_estimate = error_estimate


class ResolutionError(NumericFailure):
    """A grid-based estimate needs a larger grid to be trustworthy."""


class BracketingFailure(NumericFailure):
    """The search region for (s, S) could not be bracketed within the caps."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        """Initialize the failure.

        Args:
            message: Human-readable description
            diagnostics: Bracket candidates and objective values tried
        """
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CertificateFailure(InventoryControlError):
    """A lower-bound certificate condition could not be established."""

    exit_code = 4

    def __init__(self, message: str, offending: Optional[List[float]] = None):
        """Initialize the failure.

        Args:
            message: Human-readable description
            offending: Locations where the condition failed
        """
        super().__init__(message)
        self.offending = offending or []


class SimulationFailure(InventoryControlError):
    """The Euler–Maruyama recursion produced a non-finite state."""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None):
        """Initialize the failure.

        Args:
            message: Human-readable description
            step: Step index at which the failure was detected
        """
        super().__init__(message)
        self.step = step


class CouplingFailure(SimulationFailure):
    """The coupled pair (Z, Z_j) broke its pathwise ordering."""


class InsufficientData(SimulationFailure):
    """Too few regeneration cycles were observed for interval estimates."""
