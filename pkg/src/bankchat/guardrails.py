"""First pipeline stage: safety classification and image screening.

A hot-reloadable blocklist gives a deterministic fast path that never
reaches the model backend; everything else is classified by the backend
with multi-turn context. Classifier failure is fail-closed: the request
never reaches a downstream stage.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .backend import (
    AdapterSpec,
    Backend,
    complete_structured,
    normalize_input,
    register_schema,
    render_prompt,
)
from .envelope import AttachmentRef, ChatTurn, ModelCallRecord
from .errors import AgentFailure, SchemaViolation
from .serialization import register_output_type


class ViolationCategory(str, Enum):
    CODE_INTERPRETER_ABUSE = "Code Interpreter Abuse"
    VIOLENT_CRIMES = "Violent Crimes"
    NON_VIOLENT_CRIMES = "Non-Violent Crimes"
    SEX_RELATED_CRIMES = "Sex-Related Crimes"
    DEFAMATION_MISINFORMATION_UNETHICAL = "Defamation, Misinformation, Unethical"
    PRIVACY = "Privacy"
    CONTROVERSIAL_TOPICS_POLITICS = "Controversial Topics, Politics"
    HATE = "Hate"


# User-facing refusal text per category; never echoes policy internals.
REFUSAL_MESSAGES: dict[ViolationCategory, str] = {
    ViolationCategory.CODE_INTERPRETER_ABUSE: (
        "I can't help with that request. Let me know if you have a banking question."
    ),
    ViolationCategory.VIOLENT_CRIMES: (
        "I can't assist with anything involving harm or violence. "
        "I'm happy to help with your banking needs."
    ),
    ViolationCategory.NON_VIOLENT_CRIMES: (
        "I can't assist with that. If you have a banking question, I'm here to help."
    ),
    ViolationCategory.SEX_RELATED_CRIMES: (
        "I can't help with that request. Let's keep things to banking topics."
    ),
    ViolationCategory.DEFAMATION_MISINFORMATION_UNETHICAL: (
        "I can't help with that. Is there a banking matter I can assist with?"
    ),
    ViolationCategory.PRIVACY: (
        "I can't share or request confidential personal information. "
        "Is there something else I can help you with?"
    ),
    ViolationCategory.CONTROVERSIAL_TOPICS_POLITICS: (
        "I'd rather not discuss that topic. I'm happy to help with your banking needs."
    ),
    ViolationCategory.HATE: (
        "I won't engage with that kind of content. "
        "Let me know if I can help with a banking matter."
    ),
}


@dataclass(frozen=True)
class GuardrailVerdict:
    is_safe: bool
    guardrail_violation: ViolationCategory | None = None
    message: str | None = None

    def __post_init__(self) -> None:
        if self.is_safe != (self.guardrail_violation is None):
            raise ValueError("isSafe must be true exactly when the violation is null")
        if not self.is_safe and not self.message:
            raise ValueError("unsafe verdict requires a non-empty message")


def safe_verdict() -> GuardrailVerdict:
    return GuardrailVerdict(is_safe=True)


def unsafe_verdict(category: ViolationCategory, message: str | None = None) -> GuardrailVerdict:
    return GuardrailVerdict(
        is_safe=False,
        guardrail_violation=category,
        message=message or REFUSAL_MESSAGES[category],
    )


def _verdict_to_jsonable(v: GuardrailVerdict) -> dict:
    return {
        "isSafe": v.is_safe,
        "guardrailViolation": v.guardrail_violation.value if v.guardrail_violation else None,
        "message": v.message,
    }


def _verdict_from_jsonable(raw: object) -> GuardrailVerdict:
    if not isinstance(raw, dict):
        raise SchemaViolation("guardrail verdict must be an object")
    unknown = set(raw) - {"isSafe", "guardrailViolation", "message"}
    if unknown:
        raise SchemaViolation(f"unexpected guardrail fields: {sorted(unknown)}")
    if not isinstance(raw.get("isSafe"), bool):
        raise SchemaViolation("isSafe must be a boolean")
    violation = raw.get("guardrailViolation")
    category: ViolationCategory | None = None
    if violation is not None:
        try:
            category = ViolationCategory(violation)
        except ValueError as exc:
            raise SchemaViolation(f"unknown violation category {violation!r}") from exc
    message = raw.get("message")
    if message is not None and not isinstance(message, str):
        raise SchemaViolation("message must be a string or null")
    try:
        return GuardrailVerdict(
            is_safe=raw["isSafe"], guardrail_violation=category, message=message
        )
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc


register_output_type(
    "guardrail_verdict", GuardrailVerdict, _verdict_to_jsonable, _verdict_from_jsonable
)
register_schema("guardrail_verdict", _verdict_from_jsonable)


# ---------------------------------------------------------------------------
# Blocklist


@dataclass(frozen=True)
class BlocklistPolicy:
    """Normalized phrase blocklist; version strictly increases on reload."""

    version: int
    phrases: tuple[str, ...]
    per_phrase_category: dict[str, ViolationCategory] = field(default_factory=dict)

    def match(self, text: str) -> tuple[str, ViolationCategory] | None:
        normalized = normalize_input(text)
        for phrase in self.phrases:
            if phrase in normalized:
                return phrase, self.per_phrase_category[phrase]
        return None


def parse_blocklist(source: str | dict, version: int) -> BlocklistPolicy:
    """Parse the blocklist file format {version, entries:[{phrase, category}]}.

    The in-memory version is the supplied monotone counter; the file's own
    version field is informational only.
    """
    raw = json.loads(source) if isinstance(source, str) else source
    if not isinstance(raw, dict) or not isinstance(raw.get("entries"), list):
        raise ValueError("blocklist must be an object with an entries array")
    phrases: list[str] = []
    categories: dict[str, ViolationCategory] = {}
    for entry in raw["entries"]:
        phrase = normalize_input(entry["phrase"])
        if not phrase:
            raise ValueError("blocklist phrase is empty after normalization")
        category = ViolationCategory(entry["category"])
        phrases.append(phrase)
        categories[phrase] = category
    return BlocklistPolicy(
        version=version, phrases=tuple(phrases), per_phrase_category=categories
    )


# ---------------------------------------------------------------------------
# Image moderation stub


@dataclass(frozen=True)
class ImageScreenResult:
    allowed: bool
    reason: str | None = None
    category: ViolationCategory | None = None


class ImageModerationStub:
    """Pluggable visual moderation: allow unless fixture-flagged.

    ``flagged`` maps attachment ids to the violation category a real
    moderation model would report.
    """

    def __init__(self, flagged: dict[str, ViolationCategory] | None = None):
        self.flagged = dict(flagged or {})

    def screen(self, attachment: AttachmentRef) -> ImageScreenResult:
        if attachment.size_bytes <= 0:
            return ImageScreenResult(allowed=False, reason="unreadable")
        category = self.flagged.get(attachment.attachment_id)
        if category is not None:
            return ImageScreenResult(
                allowed=False, reason="flagged content", category=category
            )
        return ImageScreenResult(allowed=True)


class GuardrailsAgent:
    """Screens text and attachments; blocklist matches never hit the backend."""

    def __init__(
        self,
        spec: AdapterSpec,
        backend: Backend,
        policy: BlocklistPolicy | None = None,
        moderation: ImageModerationStub | None = None,
        retry_limit: int = 2,
    ):
        self.spec = spec
        self.backend = backend
        self.moderation = moderation or ImageModerationStub()
        self.retry_limit = retry_limit
        self._policy = policy or BlocklistPolicy(version=1, phrases=())
        self._policy_lock = threading.Lock()
        self.backend_calls = 0

    @property
    def policy(self) -> BlocklistPolicy:
        return self._policy

    def reload_policy(self, source: str | dict) -> BlocklistPolicy:
        """Swap in a new blocklist; on parse error the prior policy stays active."""
        with self._policy_lock:
            new_policy = parse_blocklist(source, version=self._policy.version + 1)
            self._policy = new_policy
        return new_policy

    def screen_image(self, attachment: AttachmentRef) -> ImageScreenResult:
        return self.moderation.screen(attachment)

    def screen_text(
        self, turn: ChatTurn, history: Sequence[ChatTurn]
    ) -> tuple[GuardrailVerdict, ModelCallRecord | None]:
        """Classify one turn; returns the verdict and the backend call, if any.

        Raises AgentFailure when the classifier cannot produce a valid
        verdict; callers must not run any downstream stage in that case.
        """
        policy = self._policy
        hit = policy.match(turn.text)
        if hit is not None:
            _, category = hit
            return unsafe_verdict(category), None
        for attachment in turn.attachments:
            result = self.screen_image(attachment)
            if not result.allowed:
                if result.category is not None:
                    return unsafe_verdict(result.category), None
                raise AgentFailure("Guardrails", f"undecodable attachment: {result.reason}")
        try:
            self.backend_calls += 1
            verdict, record = complete_structured(
                self.spec,
                render_prompt(self.spec, {}),
                list(history) + [turn],
                self.backend,
                retry_limit=self.retry_limit,
            )
        except SchemaViolation as exc:
            raise AgentFailure("Guardrails", exc) from exc
        return verdict, record
