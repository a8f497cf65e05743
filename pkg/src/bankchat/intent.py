"""Second pipeline stage: six-intent classification and dispatch.

Classification looks at the most recent user message; history is consulted
only to disambiguate short or ambiguous follow-ups. A clarification result
ends the turn without an Action stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .backend import AdapterSpec, Backend, complete_structured, register_schema, render_prompt
from .envelope import ChatTurn, ModelCallRecord
from .errors import SchemaViolation, UnroutableIntent
from .serialization import register_output_type

CLARIFICATION_FALLBACK = "Could you rephrase that?"


class IntentCategory(str, Enum):
    PAYMENT = "PAYMENT"
    HISTORY_INQUIRY = "HISTORY_INQUIRY"
    ACCOUNT_INQUIRY = "ACCOUNT_INQUIRY"
    INSIGHT = "INSIGHT"
    FAQ = "FAQ"
    CHAT = "CHAT"


@dataclass(frozen=True)
class IntentResult:
    intent: IntentCategory
    clarification_needed: bool = False
    message: str | None = None

    def __post_init__(self) -> None:
        if self.clarification_needed and not self.message:
            raise ValueError("clarification requires a non-empty message")
        if not self.clarification_needed and self.message is not None:
            raise ValueError("message must be null unless clarification is needed")


def _intent_to_jsonable(r: IntentResult) -> dict:
    return {
        "intent": r.intent.value,
        "clarificationNeeded": r.clarification_needed,
        "message": r.message,
    }


def _intent_from_jsonable(raw: object) -> IntentResult:
    if not isinstance(raw, dict):
        raise SchemaViolation("intent result must be an object")
    unknown = set(raw) - {"intent", "clarificationNeeded", "message"}
    if unknown:
        raise SchemaViolation(f"unexpected intent fields: {sorted(unknown)}")
    try:
        intent = IntentCategory(raw.get("intent"))
    except ValueError as exc:
        raise SchemaViolation(f"unknown intent {raw.get('intent')!r}") from exc
    clarification = raw.get("clarificationNeeded")
    if not isinstance(clarification, bool):
        raise SchemaViolation("clarificationNeeded must be a boolean")
    message = raw.get("message")
    if message is not None and not isinstance(message, str):
        raise SchemaViolation("message must be a string or null")
    try:
        return IntentResult(
            intent=intent, clarification_needed=clarification, message=message
        )
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc


register_output_type("intent_result", IntentResult, _intent_to_jsonable, _intent_from_jsonable)
register_schema("intent_result", _intent_from_jsonable)


class IntentRouter:
    def __init__(self, spec: AdapterSpec, backend: Backend, retry_limit: int = 2):
        self.spec = spec
        self.backend = backend
        self.retry_limit = retry_limit

    def classify(
        self, turn: ChatTurn, history: Sequence[ChatTurn]
    ) -> tuple[IntentResult, ModelCallRecord | None]:
        """Classify the latest message; on failure fall back to clarification."""
        # An image with no caption is transfer evidence (receipt or chat
        # screenshot); route it without a model call.
        if turn.attachments and not turn.text.strip():
            return (
                IntentResult(intent=IntentCategory.PAYMENT, clarification_needed=False),
                None,
            )
        try:
            result, record = complete_structured(
                self.spec,
                render_prompt(self.spec, {}),
                list(history) + [turn],
                self.backend,
                retry_limit=self.retry_limit,
            )
            return result, record
        except SchemaViolation:
            fallback = IntentResult(
                intent=IntentCategory.CHAT,
                clarification_needed=True,
                message=CLARIFICATION_FALLBACK,
            )
            return fallback, None


def dispatch(result: IntentResult, handlers: dict[IntentCategory, object]) -> object:
    """Resolve the action handler for a non-clarification result."""
    if result.clarification_needed:
        raise ValueError("clarification results are never dispatched")
    handler = handlers.get(result.intent)
    if handler is None:
        raise UnroutableIntent(f"no handler registered for {result.intent.value}")
    return handler


def assert_total(handlers: dict[IntentCategory, object]) -> None:
    """Startup assertion: every intent category has a registered handler."""
    missing = [c.value for c in IntentCategory if c not in handlers]
    if missing:
        raise UnroutableIntent(f"missing handlers for: {missing}")
