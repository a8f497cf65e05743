"""Shared per-request context threaded through the agent pipeline.

A :class:`PipelineEnvelope` carries one user turn plus bounded history
through the ordered stages Guardrails -> Intent -> Action -> Confirmation.
Every executed stage appends exactly one :class:`StageRecord` whose
``verdict_digest`` is the canonical serialization of that stage's
structured output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .errors import InputRejected
from .serialization import canonical_serialize, type_name_of

DEFAULT_HISTORY_CAP = 10


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


class Language(str, Enum):
    EN = "EN"
    MS = "MS"
    ZH = "ZH"
    AUTO = "auto"


class Stage(str, Enum):
    GUARDRAILS = "Guardrails"
    INTENT = "Intent"
    ACTION = "Action"
    CONFIRMATION = "Confirmation"


STAGE_ORDER = (Stage.GUARDRAILS, Stage.INTENT, Stage.ACTION, Stage.CONFIRMATION)


@dataclass(frozen=True)
class AttachmentRef:
    """Handle to an uploaded image payload (fixture-backed at desk scale)."""

    attachment_id: str
    size_bytes: int = 1024


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    text: str
    attachments: tuple[AttachmentRef, ...] = ()
    timestamp: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc)
    )

    def has_content(self) -> bool:
        return bool(self.text.strip()) or bool(self.attachments)


def user_turn(text: str, attachments: tuple[AttachmentRef, ...] = ()) -> ChatTurn:
    return ChatTurn(role=Role.USER, text=text, attachments=attachments)


def assistant_turn(text: str) -> ChatTurn:
    return ChatTurn(role=Role.ASSISTANT, text=text)


def validate_history(history: list[ChatTurn]) -> None:
    """Roles must strictly alternate starting from user."""
    for i, turn in enumerate(history):
        expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
        if turn.role is not expected:
            raise ValueError(
                f"history role at index {i} is {turn.role.value}, expected {expected.value}"
            )


def trim_history(history: list[ChatTurn], cap: int) -> list[ChatTurn]:
    """Drop oldest turns beyond the cap, keeping alternation from a user turn."""
    if len(history) <= cap:
        return list(history)
    trimmed = history[len(history) - cap :]
    while trimmed and trimmed[0].role is not Role.USER:
        trimmed = trimmed[1:]
    return trimmed


@dataclass
class ModelCallRecord:
    """Accounting for one backend call (token usage feeds the cost metric)."""

    adapter_id: str
    prompt_token_count: int
    completion_token_count: int
    latency_ms: float
    attempt: int

    def __post_init__(self) -> None:
        if self.prompt_token_count < 0 or self.completion_token_count < 0:
            raise ValueError("token counts must be >= 0")
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


@dataclass
class StageRecord:
    stage: Stage
    verdict_type: str
    verdict_digest: bytes
    latency_ms: float
    backend_call: ModelCallRecord | None = None


@dataclass
class PipelineEnvelope:
    """The shared JSON context passed between agents, plus its audit trace."""

    session_id: str
    turn: ChatTurn
    history: list[ChatTurn] = field(default_factory=list)
    language: Language = Language.AUTO
    stage_trace: list[StageRecord] = field(default_factory=list)
    final_reply: str | None = None

    def __post_init__(self) -> None:
        validate_history(self.history)

    def record_stage(
        self,
        stage: Stage,
        verdict: object,
        latency_ms: float,
        backend_call: ModelCallRecord | None = None,
    ) -> StageRecord:
        """Append one StageRecord, enforcing the stage-order prefix rule."""
        position = len(self.stage_trace)
        if position >= len(STAGE_ORDER):
            raise ValueError("stage trace already complete")
        expected = STAGE_ORDER[position]
        if stage is not expected:
            raise ValueError(
                f"stage {stage.value} out of order: expected {expected.value}"
            )
        record = StageRecord(
            stage=stage,
            verdict_type=type_name_of(verdict),
            verdict_digest=canonical_serialize(verdict),
            latency_ms=latency_ms,
            backend_call=backend_call,
        )
        self.stage_trace.append(record)
        return record

    def record_confirmation(
        self, verdict: object, latency_ms: float = 0.0
    ) -> StageRecord:
        """Append the Confirmation record once the user decision resolves.

        The Confirmation stage is written by the gateway when the user
        approves, declines, or edits; it may only follow an Action record.
        """
        if len(self.stage_trace) != 3 or self.stage_trace[-1].stage is not Stage.ACTION:
            raise ValueError("confirmation requires a completed Action stage")
        return self.record_stage(Stage.CONFIRMATION, verdict, latency_ms)

    def stage_names(self) -> list[str]:
        return [record.stage.value for record in self.stage_trace]


def build_envelope(
    session_id: str,
    text: str,
    history: list[ChatTurn] | None = None,
    attachments: tuple[AttachmentRef, ...] = (),
    language: Language = Language.AUTO,
    history_cap: int = DEFAULT_HISTORY_CAP,
) -> PipelineEnvelope:
    turn = user_turn(text, attachments)
    trimmed = trim_history(history or [], history_cap)
    return PipelineEnvelope(
        session_id=session_id, turn=turn, history=trimmed, language=language
    )


def require_processable(turn: ChatTurn) -> None:
    """Reject degenerate turns (no text and no attachments) before any stage."""
    if turn.text is None:
        raise InputRejected("turn text is null")
    if not turn.has_content():
        raise InputRejected("empty turn: no text and no attachments")
