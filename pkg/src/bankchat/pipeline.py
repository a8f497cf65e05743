"""Ordered pipeline driver.

One envelope flows Guardrails -> Intent -> Action; the Confirmation
record is appended later, when the human decision on a pending
transaction resolves. Unsafe inputs short-circuit after Guardrails, and
clarification requests end the turn without an Action stage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable

from .banking import Bank, PendingTransaction
from .envelope import ModelCallRecord, PipelineEnvelope, Stage, require_processable
from .errors import AgentFailure, BackendUnavailable, SchemaViolation
from .faq import FaqAgent
from .guardrails import GuardrailsAgent, GuardrailVerdict
from .intent import IntentCategory, IntentResult, IntentRouter, assert_total
from .payment import PaymentAgent, TransferDraft
from .serialization import Money, register_output_type

GENERIC_APOLOGY = "Sorry, something went wrong on our side. Please try again."

HISTORY_SHOWN = 5


@dataclass(frozen=True)
class QueryResult:
    """Deterministic banking answer; ``data`` must stay jsonable with
    Money marking currency so digests round-trip exactly."""

    message: str
    data: dict

    def __post_init__(self) -> None:
        if not self.message:
            raise ValueError("message must be non-empty")


def _query_to_jsonable(result: QueryResult) -> dict:
    return {"message": result.message, "data": result.data}


def _restore_money(value: object) -> object:
    if isinstance(value, Decimal):
        return Money.from_major(value)
    if isinstance(value, list):
        return [_restore_money(v) for v in value]
    if isinstance(value, dict):
        return {k: _restore_money(v) for k, v in value.items()}
    return value


def _query_from_jsonable(raw: object) -> QueryResult:
    if not isinstance(raw, dict) or set(raw) != {"message", "data"}:
        raise SchemaViolation("query result must have exactly message, data")
    return QueryResult(message=raw["message"], data=_restore_money(raw["data"]))


register_output_type("query_result", QueryResult, _query_to_jsonable, _query_from_jsonable)


# -- deterministic handlers -------------------------------------------------

def account_inquiry(bank: Bank, account_id: str) -> QueryResult:
    summary = bank.account_summary(account_id)
    balance: Money = summary["availableBalance"]
    return QueryResult(
        message=(
            f"Account {summary['accountNumber']} has an available balance "
            f"of RM{balance.render()}."
        ),
        data=summary,
    )


def history_inquiry(bank: Bank, account_id: str) -> QueryResult:
    records = bank.query_history(account_id)[:HISTORY_SHOWN]
    if not records:
        return QueryResult(
            message="You have no transactions yet.", data={"transactions": []}
        )
    lines = [
        f"RM{Money(r.amount).render()} to {r.counterparty_name} ({r.reference})"
        for r in records
    ]
    return QueryResult(
        message="Your recent transactions: " + "; ".join(lines) + ".",
        data={
            "transactions": [
                {
                    "txId": r.tx_id,
                    "amount": Money(r.amount),
                    "counterpartyName": r.counterparty_name,
                    "reference": r.reference,
                    "timestamp": r.timestamp.isoformat(),
                }
                for r in records
            ]
        },
    )


def spending_insight(bank: Bank, account_id: str) -> QueryResult:
    """Canned category rollup: references stand in for spend categories."""
    by_category: dict[str, int] = {}
    for record in bank.query_history(account_id):
        by_category[record.reference] = by_category.get(record.reference, 0) + record.amount
    total = sum(by_category.values())
    if not by_category:
        return QueryResult(
            message="No spending to summarize yet.",
            data={"total": Money(0), "byCategory": {}},
        )
    top = max(by_category.items(), key=lambda kv: (kv[1], kv[0]))
    return QueryResult(
        message=(
            f"You've sent RM{Money(total).render()} in total; the biggest "
            f"share went to {top[0]} (RM{Money(top[1]).render()})."
        ),
        data={
            "total": Money(total),
            "byCategory": {k: Money(v) for k, v in by_category.items()},
        },
    )


def small_talk(text: str) -> QueryResult:
    folded = text.casefold()
    if "thank" in folded:
        return QueryResult(
            message="You're welcome! Anything else I can help with?", data={}
        )
    if "bye" in folded:
        return QueryResult(message="Goodbye, and take care!", data={})
    return QueryResult(
        message="Hello! How can I help you with your banking today?", data={}
    )


# -- registry ---------------------------------------------------------------

@dataclass
class AgentRegistry:
    """All pipeline dependencies; read-only after startup."""

    guardrails: GuardrailsAgent
    intent: IntentRouter
    payment: PaymentAgent
    faq: FaqAgent
    bank: Bank
    default_account_id: str

    def __post_init__(self) -> None:
        if not self.bank.has_account(self.default_account_id):
            raise ValueError(f"unknown default account {self.default_account_id}")
        assert_total(self.handlers())

    def handlers(self) -> dict[IntentCategory, Callable]:
        return {
            IntentCategory.PAYMENT: self.payment.process,
            IntentCategory.FAQ: self.faq.process,
            IntentCategory.ACCOUNT_INQUIRY: account_inquiry,
            IntentCategory.HISTORY_INQUIRY: history_inquiry,
            IntentCategory.INSIGHT: spending_insight,
            IntentCategory.CHAT: small_talk,
        }


@dataclass
class TurnContext:
    """Per-session extras the stateless pipeline needs for one turn."""

    account_id: str
    retained_drafts: tuple[TransferDraft, ...] = ()


@dataclass
class PipelineResult:
    envelope: PipelineEnvelope
    guardrail_verdict: GuardrailVerdict | None = None
    intent: IntentResult | None = None
    pending: PendingTransaction | None = None
    retained_drafts: tuple[TransferDraft, ...] = ()
    grounding_doc_ids: tuple[str, ...] = ()
    failed_stage: str | None = None

    @property
    def reply(self) -> str:
        return self.envelope.final_reply or ""


def run_pipeline(
    envelope: PipelineEnvelope,
    registry: AgentRegistry,
    context: TurnContext | None = None,
) -> PipelineResult:
    """Drive one turn through the stages, appending one record per stage.

    Raises InputRejected for degenerate turns before any stage runs.
    Agent failures return the envelope with a partial trace and a generic
    apology; they never surface as exceptions here.
    """
    require_processable(envelope.turn)
    if envelope.stage_trace:
        raise ValueError("envelope already processed")
    if context is None:
        context = TurnContext(account_id=registry.default_account_id)
    result = PipelineResult(envelope=envelope)
    turn, history = envelope.turn, envelope.history

    started = time.perf_counter()
    try:
        verdict, call = registry.guardrails.screen_text(turn, history)
    except (AgentFailure, BackendUnavailable):
        envelope.final_reply = GENERIC_APOLOGY
        result.failed_stage = Stage.GUARDRAILS.value
        return result
    envelope.record_stage(
        Stage.GUARDRAILS, verdict, (time.perf_counter() - started) * 1000.0, call
    )
    result.guardrail_verdict = verdict
    if not verdict.is_safe:
        envelope.final_reply = verdict.message
        return result

    started = time.perf_counter()
    try:
        intent_result, call = registry.intent.classify(turn, history)
    except (AgentFailure, BackendUnavailable):
        envelope.final_reply = GENERIC_APOLOGY
        result.failed_stage = Stage.INTENT.value
        return result
    envelope.record_stage(
        Stage.INTENT, intent_result, (time.perf_counter() - started) * 1000.0, call
    )
    result.intent = intent_result
    if intent_result.clarification_needed:
        envelope.final_reply = intent_result.message
        return result

    started = time.perf_counter()
    try:
        action_verdict, reply, call = _run_action(
            intent_result.intent, envelope, registry, context, result
        )
    except (AgentFailure, BackendUnavailable):
        envelope.final_reply = GENERIC_APOLOGY
        result.failed_stage = Stage.ACTION.value
        return result
    envelope.record_stage(
        Stage.ACTION, action_verdict, (time.perf_counter() - started) * 1000.0, call
    )
    envelope.final_reply = reply
    return result


def _run_action(
    intent: IntentCategory,
    envelope: PipelineEnvelope,
    registry: AgentRegistry,
    context: TurnContext,
    result: PipelineResult,
) -> tuple[object, str, ModelCallRecord | None]:
    turn, history = envelope.turn, envelope.history
    try:
        if intent is IntentCategory.PAYMENT:
            outcome = registry.payment.process(
                turn,
                history,
                session_id=envelope.session_id,
                account_id=context.account_id,
                retained_drafts=context.retained_drafts,
            )
            result.pending = outcome.pending
            result.retained_drafts = outcome.retained_drafts
            return outcome.result, outcome.result.message, outcome.record
        if intent is IntentCategory.FAQ:
            faq_outcome = registry.faq.process(turn, history)
            result.grounding_doc_ids = faq_outcome.grounding_doc_ids
            return faq_outcome.answer, faq_outcome.answer.message, faq_outcome.record
        if intent is IntentCategory.ACCOUNT_INQUIRY:
            query = account_inquiry(registry.bank, context.account_id)
        elif intent is IntentCategory.HISTORY_INQUIRY:
            query = history_inquiry(registry.bank, context.account_id)
        elif intent is IntentCategory.INSIGHT:
            query = spending_insight(registry.bank, context.account_id)
        else:
            query = small_talk(turn.text)
        return query, query.message, None
    except (AgentFailure, BackendUnavailable):
        raise
    except Exception as exc:
        raise AgentFailure(Stage.ACTION.value, exc) from exc
