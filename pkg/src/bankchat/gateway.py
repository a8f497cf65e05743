"""Stateless session gateway over the pipeline.

Holds per-session conversational state server-side (history, retained
drafts, one pending transaction) behind opaque session ids, exposes the
HTTP surface, and writes the redacted append-only audit trail. Closing
or expiring a session declines its pending transaction and makes every
session endpoint answer 404 from then on.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime

from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .banking import (
    Clock,
    Decision,
    InvalidState,
    PendingTransaction,
    StaleEdit,
    SystemClock,
    TwoFaRequired,
    TxState,
    UnknownTransaction,
)
from .config import GatewaySettings
from .envelope import (
    AttachmentRef,
    ChatTurn,
    Language,
    PipelineEnvelope,
    assistant_turn,
    build_envelope,
    user_turn,
)
from .errors import (
    AuthFailure,
    BankChatError,
    InputRejected,
    PipelineBusy,
    UnknownAccount,
    UnknownSession,
)
from .faq import KnowledgeDoc, VectorStore
from .payment import TransferDraft
from .pipeline import AgentRegistry, TurnContext, run_pipeline
from .serialization import Money, canonical_serialize, register_output_type

SCALAR_TYPES = (str, int, float, bool, type(None))


# -- confirmation verdict ---------------------------------------------------

@dataclass(frozen=True)
class DecisionOutcome:
    """What the Confirmation stage records: the human decision and where
    the transaction landed."""

    tx_id: str
    decision: str
    state: str
    fail_reason: str | None = None


def _decision_to_jsonable(value: DecisionOutcome) -> dict:
    return {
        "txId": value.tx_id,
        "decision": value.decision,
        "state": value.state,
        "failReason": value.fail_reason,
    }


def _decision_from_jsonable(raw: object) -> DecisionOutcome:
    if not isinstance(raw, dict) or set(raw) != {"txId", "decision", "state", "failReason"}:
        raise ValueError("decision outcome must have txId, decision, state, failReason")
    return DecisionOutcome(
        tx_id=raw["txId"],
        decision=raw["decision"],
        state=raw["state"],
        fail_reason=raw["failReason"],
    )


register_output_type(
    "decision_outcome", DecisionOutcome, _decision_to_jsonable, _decision_from_jsonable
)


# -- audit ------------------------------------------------------------------

@dataclass(frozen=True)
class AuditEvent:
    seq: int
    timestamp: str
    session_id: str
    stage: str
    event_kind: str
    verdict_sha256: str | None
    labels: dict
    redaction_applied: bool = True

    def to_jsonable(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "sessionId": self.session_id,
            "stage": self.stage,
            "eventKind": self.event_kind,
            "verdictSha256": self.verdict_sha256,
            "labels": self.labels,
            "redactionApplied": self.redaction_applied,
        }


class AuditLog:
    """Gap-free append-only event log.

    Events carry only categorical labels and content hashes, never message
    text or extracted transfer fields; that keeps the trail reviewable
    without becoming a second copy of customer data.
    """

    def __init__(self, path: str = "", clock: Clock | None = None):
        self._path = path
        self._clock = clock or SystemClock()
        self._events: list[AuditEvent] = []
        self._lock = threading.Lock()

    def emit(
        self,
        session_id: str,
        stage: str,
        event_kind: str,
        verdict_digest: bytes | None = None,
        labels: dict | None = None,
    ) -> AuditEvent:
        clean: dict = {}
        for key, value in (labels or {}).items():
            if not isinstance(value, SCALAR_TYPES):
                raise ValueError(f"audit label {key!r} must be a scalar")
            clean[key] = value
        with self._lock:
            event = AuditEvent(
                seq=len(self._events) + 1,
                timestamp=self._clock.now().isoformat(),
                session_id=session_id,
                stage=stage,
                event_kind=event_kind,
                verdict_sha256=(
                    hashlib.sha256(verdict_digest).hexdigest()
                    if verdict_digest is not None
                    else None
                ),
                labels=clean,
            )
            self._events.append(event)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event.to_jsonable(), ensure_ascii=False) + "\n")
        return event

    def events(self) -> tuple[AuditEvent, ...]:
        with self._lock:
            return tuple(self._events)


# -- sessions ---------------------------------------------------------------

@dataclass
class Session:
    session_id: str
    last_activity: datetime
    history: list[ChatTurn] = field(default_factory=list)
    retained_drafts: tuple[TransferDraft, ...] = ()
    pending_tx_id: str | None = None
    twofa_code: str | None = None
    payment_envelope: PipelineEnvelope | None = None
    turn_lock: threading.Lock = field(default_factory=threading.Lock)


def _wire(value: object) -> object:
    """Render Money to bare string amounts for HTTP payloads."""
    if isinstance(value, Money):
        return value.render()
    if isinstance(value, dict):
        return {k: _wire(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_wire(v) for v in value]
    return value


_EDIT_FIELD_MAP = {
    "recipientName": "recipient_name",
    "bankName": "bank_name",
    "accountNumber": "account_number",
    "amount": "amount",
    "reference": "reference",
}


class SessionGateway:
    """Session lifecycle, turn processing, decisions, and admin actions."""

    def __init__(
        self,
        registry: AgentRegistry,
        settings: GatewaySettings | None = None,
        clock: Clock | None = None,
        history_cap: int = 10,
        account_id: str | None = None,
    ):
        self.registry = registry
        self.settings = settings or GatewaySettings()
        self.clock: Clock = clock or SystemClock()
        self.history_cap = history_cap
        self.account_id = account_id or registry.default_account_id
        if not registry.bank.has_account(self.account_id):
            raise UnknownAccount(self.account_id)
        self.audit = AuditLog(self.settings.audit_path, self.clock)
        self._sessions: dict[str, Session] = {}
        self._tx_owner: dict[str, str] = {}
        self._lock = threading.Lock()
        self._code_counter = 0
        registry.bank.set_audit_sink(self._bank_audit)
        registry.bank.set_second_factor_verifier(self._verify_second_factor)

    # -- internals ----------------------------------------------------------

    def _bank_audit(self, kind: str, labels: dict) -> None:
        session_id = self._tx_owner.get(str(labels.get("txId")), "-")
        self.audit.emit(session_id, "Confirmation", kind, labels=labels)

    def _verify_second_factor(self, session_id: str, proof: str | None) -> bool:
        session = self._sessions.get(session_id)
        return (
            session is not None
            and session.twofa_code is not None
            and proof == session.twofa_code
        )

    def _issue_code(self, session_id: str, tx_id: str) -> str:
        # Deterministic per issue so fixtures can script flows; the counter
        # forces a fresh code after every edit.
        with self._lock:
            self._code_counter += 1
            seed = f"{session_id}:{tx_id}:{self._code_counter}"
        digest = hashlib.sha256(seed.encode("utf-8")).hexdigest()
        digits = "".join(c for c in digest if c.isdigit())
        return (digits + "000000")[:6]

    def _get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        age = (self.clock.now() - session.last_activity).total_seconds()
        if age > self.settings.session_expiry_s:
            self._drop(session, "session_expired")
            raise UnknownSession(session_id)
        return session

    def _drop(self, session: Session, event_kind: str) -> None:
        if session.pending_tx_id is not None:
            self.registry.bank.expire_pending(session.pending_tx_id)
        with self._lock:
            self._sessions.pop(session.session_id, None)
        self.audit.emit(session.session_id, "-", event_kind)

    # -- session lifecycle --------------------------------------------------

    def open_session(self) -> dict:
        session_id = f"sess-{uuid.uuid4().hex[:12]}"
        session = Session(session_id=session_id, last_activity=self.clock.now())
        with self._lock:
            self._sessions[session_id] = session
        self.audit.emit(session_id, "-", "session_opened")
        return {
            "sessionId": session_id,
            "expiresInSeconds": self.settings.session_expiry_s,
        }

    def close_session(self, session_id: str) -> dict:
        session = self._get(session_id)
        self._drop(session, "session_closed")
        return {"sessionId": session_id, "closed": True}

    def open_session_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)

    # -- turns --------------------------------------------------------------

    def post_message(
        self,
        session_id: str,
        text: str,
        attachments: tuple[AttachmentRef, ...] = (),
        language: Language = Language.AUTO,
    ) -> dict:
        session = self._get(session_id)
        if not session.turn_lock.acquire(blocking=False):
            raise PipelineBusy(session_id)
        try:
            envelope = build_envelope(
                session_id,
                text,
                list(session.history),
                attachments=attachments,
                language=language,
                history_cap=self.history_cap,
            )
            context = TurnContext(
                account_id=self.account_id,
                retained_drafts=session.retained_drafts,
            )
            result = run_pipeline(envelope, self.registry, context)
            self._audit_stages(session_id, envelope)

            session.history.append(user_turn(text, attachments))
            session.history.append(assistant_turn(result.reply))
            session.retained_drafts = result.retained_drafts
            response: dict = {
                "sessionId": session_id,
                "reply": result.reply,
                "stages": envelope.stage_names(),
                "pendingTransaction": None,
            }
            if result.pending is not None:
                self._register_pending(session, envelope, result.pending, response)
            session.last_activity = self.clock.now()
            return response
        finally:
            session.turn_lock.release()

    def _audit_stages(self, session_id: str, envelope: PipelineEnvelope) -> None:
        for record in envelope.stage_trace:
            labels: dict = {
                "verdictType": record.verdict_type,
                "latencyMs": round(record.latency_ms, 3),
            }
            if record.backend_call is not None:
                call = record.backend_call
                labels.update(
                    adapterId=call.adapter_id,
                    attempt=call.attempt,
                    promptTokens=call.prompt_token_count,
                    completionTokens=call.completion_token_count,
                )
            self.audit.emit(
                session_id,
                record.stage.value,
                "stage",
                verdict_digest=record.verdict_digest,
                labels=labels,
            )

    def _register_pending(
        self,
        session: Session,
        envelope: PipelineEnvelope,
        pending: PendingTransaction,
        response: dict,
    ) -> None:
        session.pending_tx_id = pending.tx_id
        session.payment_envelope = envelope
        with self._lock:
            self._tx_owner[pending.tx_id] = session.session_id
        response["pendingTransaction"] = _wire(pending.summary())
        if pending.requires_2fa:
            session.twofa_code = self._issue_code(session.session_id, pending.tx_id)
            if self.settings.expose_2fa_code:
                response["twofaCode"] = session.twofa_code
        else:
            session.twofa_code = None

    # -- decisions ----------------------------------------------------------

    def post_decision(
        self,
        session_id: str,
        tx_id: str,
        decision: str,
        second_factor: str | None = None,
        fields: dict | None = None,
    ) -> dict:
        session = self._get(session_id)
        if not session.turn_lock.acquire(blocking=False):
            raise PipelineBusy(session_id)
        try:
            if session.pending_tx_id != tx_id:
                raise UnknownTransaction(tx_id)
            try:
                chosen = Decision(decision.lower())
            except (AttributeError, ValueError):
                raise InputRejected(f"unknown decision {decision!r}") from None
            bank = self.registry.bank
            tx = bank.decide(
                tx_id,
                chosen,
                second_factor=second_factor,
                new_fields=self._translate_fields(fields),
            )
            response: dict = {
                "sessionId": session_id,
                "txId": tx_id,
                "decision": chosen.value,
                "state": tx.state.value,
                "failReason": tx.fail_reason,
                "pendingTransaction": None,
                "message": self._decision_message(tx),
            }
            if tx.state is TxState.AWAITING_DECISION:
                # Edit path: fresh preview, fresh code when still above the
                # threshold.
                response["pendingTransaction"] = _wire(tx.summary())
                if tx.requires_2fa:
                    session.twofa_code = self._issue_code(session_id, tx_id)
                    if self.settings.expose_2fa_code:
                        response["twofaCode"] = session.twofa_code
                else:
                    session.twofa_code = None
            else:
                self._finalize(session, tx, chosen)
            session.last_activity = self.clock.now()
            return response
        finally:
            session.turn_lock.release()

    def _translate_fields(self, fields: dict | None) -> dict | None:
        if fields is None:
            return None
        translated: dict = {}
        for key, value in fields.items():
            mapped = _EDIT_FIELD_MAP.get(key, key)
            if mapped == "amount" and value is not None:
                try:
                    value = Money.from_major(str(value)).minor
                except (ValueError, ArithmeticError):
                    raise StaleEdit(f"unparseable amount {value!r}") from None
            translated[mapped] = value
        return translated

    def _decision_message(self, tx: PendingTransaction) -> str:
        draft = tx.draft
        if tx.state is TxState.EXECUTED:
            amount = Money(draft.amount).render() if draft.amount is not None else "?"
            return (
                f"Transfer of RM{amount} to {draft.recipient_name} is done. "
                "Anything else?"
            )
        if tx.state is TxState.DECLINED:
            return "Transfer cancelled. Nothing was sent."
        if tx.state is TxState.FAILED:
            return f"The transfer could not be completed ({tx.fail_reason})."
        return "Updated. Please review the transfer and confirm."

    def _finalize(self, session: Session, tx: PendingTransaction, chosen: Decision) -> None:
        envelope = session.payment_envelope
        if envelope is not None and len(envelope.stage_trace) == 3:
            outcome = DecisionOutcome(
                tx_id=tx.tx_id,
                decision=chosen.value,
                state=tx.state.value,
                fail_reason=tx.fail_reason,
            )
            record = envelope.record_confirmation(outcome)
            self.audit.emit(
                session.session_id,
                record.stage.value,
                "stage",
                verdict_digest=record.verdict_digest,
                labels={"verdictType": record.verdict_type},
            )
        session.pending_tx_id = None
        session.twofa_code = None
        session.payment_envelope = None
        session.retained_drafts = ()

    # -- admin --------------------------------------------------------------

    def check_admin(self, token: str | None) -> None:
        if token != self.settings.admin_token:
            raise AuthFailure("bad or missing admin token")

    def reload_blocklist(self, source: dict) -> dict:
        try:
            policy = self.registry.guardrails.reload_policy(source)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputRejected(f"bad blocklist payload: {exc}") from exc
        self.audit.emit(
            "-", "-", "blocklist_reloaded",
            labels={"version": policy.version, "phrases": len(policy.phrases)},
        )
        return {"version": policy.version, "phrases": len(policy.phrases)}

    def ingest_knowledge(self, docs: list[dict]) -> dict:
        try:
            parsed = [
                KnowledgeDoc(
                    doc_id=raw["docId"],
                    title=raw["title"],
                    body=raw["body"],
                    tags=tuple(raw.get("tags", ())),
                )
                for raw in docs
            ]
            store = VectorStore(parsed, dim=self.registry.faq.store.dim)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputRejected(f"bad knowledge payload: {exc}") from exc
        self.registry.faq.set_store(store)
        self.audit.emit("-", "-", "knowledge_ingested", labels={"docs": len(parsed)})
        return {"ingested": len(parsed)}


# -- HTTP layer -------------------------------------------------------------

_ERROR_STATUS: tuple[tuple[type, int], ...] = (
    (UnknownSession, 404),
    (UnknownAccount, 404),
    (UnknownTransaction, 404),
    (PipelineBusy, 409),
    (InvalidState, 409),
    (TwoFaRequired, 403),
    (StaleEdit, 422),
    (InputRejected, 422),
    (AuthFailure, 401),
)


def _status_for(exc: BankChatError) -> int:
    for cls, status in _ERROR_STATUS:
        if isinstance(exc, cls):
            return status
    return 400


class AttachmentIn(BaseModel):
    attachmentId: str
    sizeBytes: int = 1024


class MessageIn(BaseModel):
    message: str = ""
    language: str = "auto"
    attachments: list[AttachmentIn] = []


def parse_language(value: str) -> Language:
    for lang in Language:
        if value == lang.value or value.upper() == lang.name:
            return lang
    raise InputRejected(f"unknown language {value!r}")


class DecisionIn(BaseModel):
    decision: str
    secondFactor: str | None = None
    fields: dict | None = None


class KnowledgeIn(BaseModel):
    docs: list[dict]


def create_app(gateway: SessionGateway) -> FastAPI:
    app = FastAPI(title="bankchat gateway", docs_url=None, redoc_url=None)

    @app.exception_handler(BankChatError)
    async def _bankchat_error(request: Request, exc: BankChatError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.post("/sessions", status_code=201)
    def open_session():
        return gateway.open_session()

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn):
        language = parse_language(body.language)
        attachments = tuple(
            AttachmentRef(attachment_id=a.attachmentId, size_bytes=a.sizeBytes)
            for a in body.attachments
        )
        return gateway.post_message(
            session_id, body.message, attachments=attachments, language=language
        )

    @app.post("/sessions/{session_id}/transactions/{tx_id}/decision")
    def post_decision(session_id: str, tx_id: str, body: DecisionIn):
        return gateway.post_decision(
            session_id,
            tx_id,
            body.decision,
            second_factor=body.secondFactor,
            fields=body.fields,
        )

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str):
        return gateway.close_session(session_id)

    @app.post("/admin/guardrails/reload")
    def reload_blocklist(
        body: dict, x_admin_token: str | None = Header(default=None)
    ):
        gateway.check_admin(x_admin_token)
        return gateway.reload_blocklist(body)

    @app.post("/admin/knowledge")
    def ingest_knowledge(
        body: KnowledgeIn, x_admin_token: str | None = Header(default=None)
    ):
        gateway.check_admin(x_admin_token)
        return gateway.ingest_knowledge(body.docs)

    return app
