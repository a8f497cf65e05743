"""Exceptions shared across the pipeline modules."""

from __future__ import annotations


class BankChatError(Exception):
    """Base class for all package errors."""


class InputRejected(BankChatError):
    """Degenerate input refused before any pipeline stage runs."""


class AgentFailure(BankChatError):
    """A pipeline stage could not produce a valid structured output.

    Carries the stage name and the underlying cause so the driver can
    return a partial trace with a generic apology.
    """

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"agent failure in stage {stage}: {cause}")


class SchemaViolation(BankChatError):
    """Backend output failed schema validation after all retries."""


class BackendUnavailable(BankChatError):
    """Transport-level failure talking to a model backend."""


class MissingBinding(BankChatError):
    """A prompt template placeholder has no bound value."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound template placeholder: {name!r}")


class UnknownType(BankChatError):
    """Value does not belong to a registered structured-output type."""


class UnknownAccount(BankChatError):
    """Account id not present in the ledger."""


class UnknownSession(BankChatError):
    """Session id not open (never opened, closed, or expired)."""


class PipelineBusy(BankChatError):
    """A turn is already in flight for this session."""


class AuthFailure(BankChatError):
    """Admin credential missing or wrong."""


class OcrUnavailable(BankChatError):
    """No transcription available for the given attachment."""


class UnroutableIntent(BankChatError):
    """No action handler registered for the classified intent."""
