"""Exception hierarchy shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


class CapolishError(Exception):
    """Base class for all errors raised by this package."""


@dataclass(frozen=True)
class ConfigIssue:
    """One machine-readable validation failure."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ConfigError(CapolishError):
    """Raised when a run configuration fails validation."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


class NumericError(CapolishError):
    """Raised when a non-finite value reaches a comparison or selection."""


class NothingToEditError(CapolishError):
    """Raised when every slot of a canvas is frozen."""


class ScorerError(CapolishError):
    """A scorer backend failed; carries the position being polished, if any."""

    def __init__(self, message: str, *, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"position {position}: {message}"
        super().__init__(message)


class TransportError(CapolishError):
    """The byte transport to a remote scorer failed (retriable)."""


class ProtocolError(CapolishError):
    """The remote scorer sent a malformed or contract-violating reply (never retried)."""


class CapabilityError(CapolishError):
    """The connected backend does not support a required operation."""


class StaleHandleError(CapolishError):
    """An image handle is unknown to the server."""


class EnumerationBudgetError(CapolishError):
    """Exhaustive enumeration would exceed the configured budget."""
