"""Exception hierarchy shared by the numerical modules and the CLI."""
from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from src.models import StageReport


class DomainError(ValueError):
    """A value lies outside the domain where an operation is defined."""


class ResolutionError(ValueError):
    """The grid is too coarse for the requested kernel or check."""


class IncompatibleDensityError(ValueError):
    """The pressure deviation of the initial density does not have zero mean."""


class CompatibilityError(ValueError):
    """A divergence equation was asked for a right-hand side with nonzero mean."""


class ChiTooSmallError(ValueError):
    """χ(0) does not exceed nλ(0), so no positive admissible horizon exists."""

    def __init__(self, chi0: float, needed: float) -> None:
        self.chi0 = chi0
        self.needed = needed
        super().__init__(
            f"chi0 too small: χ(0) = {chi0:.6g} must exceed nλ(0) = {needed:.6g}"
        )


class ConfigurationError(ValueError):
    """A run configuration is malformed or inconsistent."""


class VerificationFailure(RuntimeError):
    """A pipeline stage produced fields that fail their verification block."""

    def __init__(self, stage: StageReport) -> None:
        self.stage = stage
        failed = ", ".join(c.name for c in stage.checks if not c.passed)
        super().__init__(f"stage {stage.stage!r} failed: {failed}")
