"""Validation reports shared by the model and cost checks."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass(frozen=True)
class Violation:
    """A single failed check."""

    check: str
    location: Optional[float]
    detail: str

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready dictionary."""
        return {"check": self.check, "location": self.location, "detail": self.detail}


@dataclass
class ValidationReport:
    """Outcome of a validation run; validation never raises."""

    subject: str
    checks: List[str] = field(default_factory=list)
    violations: List[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when no check was violated."""
        return not self.violations

    def add(self, check: str, location: Optional[float], detail: str) -> None:
        """Record a violation.

        Args:
            check: Name of the failed check
            location: Grid location where it failed, if any
            detail: Human-readable detail
        """
        self.violations.append(Violation(check, location, detail))

    def failed(self, check: str) -> List[Violation]:
        """Return violations of one check."""
        return [v for v in self.violations if v.check == check]

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready dictionary."""
        return {
            "subject": self.subject,
            "passed": self.passed,
            "checks": list(self.checks),
            "violations": [v.to_dict() for v in self.violations],
        }
