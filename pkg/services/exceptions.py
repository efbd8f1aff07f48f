"""Exception hierarchy for the solver service layer.

Every error raised on purpose by `services` derives from `MonoMFGError` so the
CLI can map it to an exit code in one place.
"""

from typing import Any


class MonoMFGError(Exception):
    """Base class for all deliberate solver-library errors."""


class ValidationError(MonoMFGError):
    """Raised when input data or configuration fails validation.

    Carries the full list of problems so the caller can print them itemized.
    """

    def __init__(self, messages: str | list[str]):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class FamilyMismatchError(ValidationError):
    """Raised when a certificate is requested for a family it does not apply to."""


class SolverFailure(MonoMFGError):
    """Raised when an iterative method stops without meeting its tolerance.

    Attributes:
        best_state: Best iterate seen (an `MFGState`, or a raw array for the
            pointwise envelope iterations).
        residual: Residual of `best_state`.
        trace: Residual trace rows recorded up to the failure.
    """

    def __init__(
        self,
        message: str,
        best_state: Any = None,
        residual: float | None = None,
        trace: list | None = None,
    ):
        super().__init__(message)
        self.best_state = best_state
        self.residual = residual
        self.trace = trace or []
        # Filled in by the continuation driver when a stage aborts
        self.track: Any = None


class CertificateViolation(MonoMFGError):
    """Raised when a sampled certificate finds a violating witness."""

    def __init__(self, message: str, witness: dict | None = None, report: Any = None):
        super().__init__(message)
        self.witness = witness or {}
        self.report = report
