"""Suite replay and scoring.

Reads JSONL test suites in the conversational-case format (prompt with
message, language, and paired past turns; exactly one ground-truth kind),
drives each case through the pipeline, and reports five normalized
scores. Two of them, risk tolerance and language proficiency, are
human-rated and only enter via an external rubric file.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Sequence

from .envelope import AttachmentRef, ChatTurn, Language, assistant_turn, user_turn
from .errors import BankChatError
from .guardrails import GuardrailVerdict
from .intent import IntentResult
from .payment import PaymentAgentResult
from .pipeline import AgentRegistry, TurnContext, run_pipeline
from .serialization import Money, canonical_parse
from .config import EvalSettings
from .envelope import build_envelope

MAX_HISTORY_ENTRIES = 10

TRANSFER_FIELDS = ("recipientName", "bankName", "accountNumber", "amount", "reference")
_KIND_KEYS = {
    "transfers": "transfer",
    "intent": "intent",
    "isSafe": "guardrail",
    "faqDocIds": "faq",
}
_EXTRA_KEYS = {
    "transfer": set(),
    "intent": {"clarificationNeeded"},
    "guardrail": {"guardrailViolation"},
    "faq": set(),
}

AXES = (
    "accuracy",
    "speed",
    "costEffectiveness",
    "riskTolerance",
    "languageProficiency",
)


class FileUnreadable(BankChatError):
    """Suite or rubric file missing or not readable."""


@dataclass(frozen=True)
class TestCase:
    case_id: str
    kind: str
    message: str
    language: Language
    history: tuple[ChatTurn, ...]
    attachments: tuple[AttachmentRef, ...]
    expected: dict


@dataclass(frozen=True)
class RejectedCase:
    lineno: int
    reason: str


def _to_minor(value: object) -> int | None:
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError("amount must be a number or string")
    if isinstance(value, (int, Decimal, str)):
        return Money.from_major(value).minor
    raise ValueError(f"amount has unsupported type {type(value).__name__}")


def _parse_ground_truth(raw: object) -> tuple[str, dict]:
    if not isinstance(raw, dict):
        raise ValueError("ground_truth must be an object")
    present = [k for k in raw if k in _KIND_KEYS]
    if len(present) != 1:
        raise ValueError("ground_truth must contain exactly one kind")
    kind = _KIND_KEYS[present[0]]
    stray = set(raw) - {present[0]} - _EXTRA_KEYS[kind]
    if stray:
        raise ValueError(f"unexpected ground_truth keys: {sorted(stray)}")

    if kind == "transfer":
        transfers = raw["transfers"]
        if isinstance(transfers, dict):
            transfers = [transfers]
        if not isinstance(transfers, list) or not transfers:
            raise ValueError("transfers must be a non-empty list")
        normalized = []
        for entry in transfers:
            if not isinstance(entry, dict) or set(entry) != set(TRANSFER_FIELDS):
                raise ValueError(
                    f"each transfer needs exactly the fields {list(TRANSFER_FIELDS)}"
                )
            normalized.append(
                {
                    "recipientName": entry["recipientName"],
                    "bankName": entry["bankName"],
                    "accountNumber": entry["accountNumber"],
                    "amount": _to_minor(entry["amount"]),
                    "reference": entry["reference"],
                }
            )
        return kind, {"transfers": normalized}
    if kind == "intent":
        return kind, {
            "intent": str(raw["intent"]),
            "clarificationNeeded": bool(raw.get("clarificationNeeded", False)),
        }
    if kind == "guardrail":
        expected = {"isSafe": bool(raw["isSafe"])}
        if "guardrailViolation" in raw:
            expected["guardrailViolation"] = raw["guardrailViolation"]
        return kind, expected
    doc_ids = raw["faqDocIds"]
    if not isinstance(doc_ids, list) or not all(isinstance(d, str) for d in doc_ids):
        raise ValueError("faqDocIds must be a list of strings")
    return kind, {"faqDocIds": list(doc_ids)}


def _parse_case(lineno: int, raw: dict) -> TestCase:
    prompt = raw.get("prompt")
    if not isinstance(prompt, dict):
        raise ValueError("prompt must be an object")
    message = prompt.get("message")
    if not isinstance(message, str):
        raise ValueError("prompt.message must be a string")
    language = Language(prompt.get("language", Language.AUTO))
    entries = prompt.get("pastMessageHistories", [])
    if not isinstance(entries, list):
        raise ValueError("pastMessageHistories must be a list")
    if len(entries) > MAX_HISTORY_ENTRIES:
        raise ValueError(
            f"pastMessageHistories has {len(entries)} entries; the cap is "
            f"{MAX_HISTORY_ENTRIES}"
        )
    history: list[ChatTurn] = []
    for entry in entries:
        if not isinstance(entry, dict) or not {"user", "assistant"} <= set(entry):
            raise ValueError("history entries need user and assistant keys")
        history.append(user_turn(str(entry["user"])))
        history.append(assistant_turn(str(entry["assistant"])))
    attachments = tuple(
        AttachmentRef(
            attachment_id=str(a["attachmentId"]),
            size_bytes=int(a.get("sizeBytes", 1024)),
        )
        for a in prompt.get("attachments", [])
    )
    kind, expected = _parse_ground_truth(raw.get("ground_truth"))
    return TestCase(
        case_id=str(raw.get("id", f"case-{lineno}")),
        kind=kind,
        message=message,
        language=language,
        history=tuple(history),
        attachments=attachments,
        expected=expected,
    )


def load_suite(path: str) -> tuple[list[TestCase], list[RejectedCase]]:
    """Parse a JSONL suite; invalid lines are reported, valid ones kept."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise FileUnreadable(f"cannot read suite {path}: {exc}") from exc
    cases: list[TestCase] = []
    rejects: list[RejectedCase] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line, parse_float=Decimal)
            cases.append(_parse_case(lineno, raw))
        except (ValueError, KeyError, TypeError) as exc:
            rejects.append(RejectedCase(lineno=lineno, reason=str(exc)))
    return cases, rejects


# -- scoring ----------------------------------------------------------------

@dataclass(frozen=True)
class CaseResult:
    case_id: str
    kind: str
    correct: bool
    latency_ms: float
    cost: float
    detail: str = ""

    def to_jsonable(self) -> dict:
        return {
            "caseId": self.case_id,
            "kind": self.kind,
            "correct": self.correct,
            "latencyMs": self.latency_ms,
            "cost": self.cost,
            "detail": self.detail,
        }


def _stage_verdict(envelope, index: int, type_name: str):
    if len(envelope.stage_trace) <= index:
        return None
    record = envelope.stage_trace[index]
    if record.verdict_type != type_name:
        return None
    return canonical_parse(type_name, record.verdict_digest)


def judge_transfer(expected: dict, result) -> tuple[bool, str]:
    verdict = _stage_verdict(result.envelope, 2, "payment_result")
    if not isinstance(verdict, PaymentAgentResult):
        return False, "no payment result recorded"
    got = [
        {
            "recipientName": d.recipient_name,
            "bankName": d.bank_name,
            "accountNumber": d.account_number,
            "amount": d.amount,
            "reference": d.reference,
        }
        for d in verdict.transfers
    ]
    want = expected["transfers"]
    if got == want:
        return True, ""
    return False, f"expected {want}, got {got}"


def judge_intent(expected: dict, result) -> tuple[bool, str]:
    verdict = _stage_verdict(result.envelope, 1, "intent_result")
    if not isinstance(verdict, IntentResult):
        return False, "no intent result recorded"
    if verdict.intent.value != expected["intent"]:
        return False, f"expected {expected['intent']}, got {verdict.intent.value}"
    if verdict.clarification_needed != expected["clarificationNeeded"]:
        return False, (
            f"expected clarificationNeeded={expected['clarificationNeeded']}, "
            f"got {verdict.clarification_needed}"
        )
    return True, ""


def judge_guardrail(expected: dict, result) -> tuple[bool, str]:
    verdict = _stage_verdict(result.envelope, 0, "guardrail_verdict")
    if not isinstance(verdict, GuardrailVerdict):
        return False, "no guardrail verdict recorded"
    if verdict.is_safe != expected["isSafe"]:
        return False, f"expected isSafe={expected['isSafe']}, got {verdict.is_safe}"
    if "guardrailViolation" in expected:
        got = verdict.guardrail_violation.value if verdict.guardrail_violation else None
        if got != expected["guardrailViolation"]:
            return False, f"expected {expected['guardrailViolation']}, got {got}"
    elif verdict.guardrail_violation is not None:
        return False, f"unexpected violation {verdict.guardrail_violation.value}"
    return True, ""


def judge_faq(expected: dict, result) -> tuple[bool, str]:
    grounded = set(result.grounding_doc_ids)
    missing = [d for d in expected["faqDocIds"] if d not in grounded]
    if missing:
        return False, f"answer not grounded in {missing}; used {sorted(grounded)}"
    return True, ""


_JUDGES = {
    "transfer": judge_transfer,
    "intent": judge_intent,
    "guardrail": judge_guardrail,
    "faq": judge_faq,
}


def _case_cost(envelope, settings: EvalSettings) -> float:
    cost = 0.0
    for record in envelope.stage_trace:
        call = record.backend_call
        if call is None:
            continue
        cost += call.prompt_token_count / 1000.0 * settings.prompt_prices.get(
            call.adapter_id, 0.0
        )
        cost += call.completion_token_count / 1000.0 * settings.completion_prices.get(
            call.adapter_id, 0.0
        )
    return cost


@dataclass
class EvalReport:
    total: int
    correct: int
    accuracy: float
    mean_latency_ms: float
    speed_score: float
    total_cost: float
    cost_score: float
    risk_score: float | None
    language_score: float | None
    transactional_error_rate: float
    faq_error_rate: float
    gates_passed: bool
    case_results: list[CaseResult] = field(default_factory=list)

    def axis_scores(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "speed": self.speed_score,
            "costEffectiveness": self.cost_score,
            "riskTolerance": self.risk_score,
            "languageProficiency": self.language_score,
        }

    def to_jsonable(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "meanLatencyMs": self.mean_latency_ms,
            "speedScore": self.speed_score,
            "totalCost": self.total_cost,
            "costScore": self.cost_score,
            "riskScore": self.risk_score,
            "languageScore": self.language_score,
            "transactionalErrorRate": self.transactional_error_rate,
            "faqErrorRate": self.faq_error_rate,
            "gatesPassed": self.gates_passed,
            "caseResults": [c.to_jsonable() for c in self.case_results],
        }

    @classmethod
    def from_jsonable(cls, raw: dict) -> "EvalReport":
        return cls(
            total=raw["total"],
            correct=raw["correct"],
            accuracy=raw["accuracy"],
            mean_latency_ms=raw["meanLatencyMs"],
            speed_score=raw["speedScore"],
            total_cost=raw["totalCost"],
            cost_score=raw["costScore"],
            risk_score=raw["riskScore"],
            language_score=raw["languageScore"],
            transactional_error_rate=raw["transactionalErrorRate"],
            faq_error_rate=raw["faqErrorRate"],
            gates_passed=raw["gatesPassed"],
            case_results=[
                CaseResult(
                    case_id=c["caseId"],
                    kind=c["kind"],
                    correct=c["correct"],
                    latency_ms=c["latencyMs"],
                    cost=c["cost"],
                    detail=c["detail"],
                )
                for c in raw["caseResults"]
            ],
        )


def load_rubric(path: str) -> dict:
    """Rubric files carry the two human-rated axis scores in [0, 1]."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise FileUnreadable(f"cannot read rubric {path}: {exc}") from exc
    scores = {}
    for key in ("riskTolerance", "languageProficiency"):
        if key in raw:
            value = float(raw[key])
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"rubric {key} must be in [0, 1]")
            scores[key] = value
    return scores


def run_case(case: TestCase, registry: AgentRegistry, settings: EvalSettings) -> CaseResult:
    envelope = build_envelope(
        f"eval-{case.case_id}",
        case.message,
        list(case.history),
        attachments=case.attachments,
        language=case.language,
    )
    start = time.perf_counter()
    result = run_pipeline(envelope, registry)
    latency_ms = (time.perf_counter() - start) * 1000.0
    correct, detail = _JUDGES[case.kind](case.expected, result)
    return CaseResult(
        case_id=case.case_id,
        kind=case.kind,
        correct=correct,
        latency_ms=latency_ms,
        cost=_case_cost(envelope, settings),
        detail=detail,
    )


def run_suite(
    cases: Sequence[TestCase],
    registry: AgentRegistry,
    settings: EvalSettings | None = None,
    rubric: dict | None = None,
    workers: int = 1,
) -> EvalReport:
    settings = settings or EvalSettings()
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1:
        results = [run_case(case, registry, settings) for case in cases]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda c: run_case(c, registry, settings), cases)
            )

    total = len(results)
    correct = sum(1 for r in results if r.correct)
    accuracy = correct / total if total else 1.0
    mean_latency = sum(r.latency_ms for r in results) / total if total else 0.0
    speed = 1.0 if mean_latency <= 0 else min(1.0, settings.target_latency_ms / mean_latency)
    total_cost = sum(r.cost for r in results)
    cost_score = 1.0 if total_cost <= 0 else min(1.0, settings.cost_budget / total_cost)

    def error_rate(kind: str) -> float:
        pool = [r for r in results if r.kind == kind]
        if not pool:
            return 0.0
        return sum(1 for r in pool if not r.correct) / len(pool)

    tx_rate = error_rate("transfer")
    faq_rate = error_rate("faq")
    gates_passed = (
        tx_rate <= settings.transactional_error_threshold
        and faq_rate <= settings.faq_error_threshold
    )
    rubric = rubric or {}
    return EvalReport(
        total=total,
        correct=correct,
        accuracy=accuracy,
        mean_latency_ms=mean_latency,
        speed_score=speed,
        total_cost=total_cost,
        cost_score=cost_score,
        risk_score=rubric.get("riskTolerance"),
        language_score=rubric.get("languageProficiency"),
        transactional_error_rate=tx_rate,
        faq_error_rate=faq_rate,
        gates_passed=gates_passed,
        case_results=results,
    )


# -- output -----------------------------------------------------------------

_AXIS_LABELS = {
    "accuracy": "Accuracy",
    "speed": "Speed",
    "costEffectiveness": "Cost Effectiveness",
    "riskTolerance": "Risk Tolerance",
    "languageProficiency": "Language Proficiency",
}


def emit_report(report: EvalReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_jsonable(), sort_keys=True, indent=2)
    if fmt == "radarData":
        axes = [
            {
                "axis": _AXIS_LABELS[name],
                "value": report.axis_scores()[name],
            }
            for name in AXES
        ]
        return json.dumps({"axes": axes}, indent=2)
    if fmt == "table":
        lines = [
            f"cases           {report.total}",
            f"correct         {report.correct}",
            f"accuracy        {report.accuracy:.4f}",
            f"mean latency    {report.mean_latency_ms:.1f} ms",
            f"speed           {report.speed_score:.4f}",
            f"total cost      {report.total_cost:.6f}",
            f"cost score      {report.cost_score:.4f}",
            "risk tolerance  "
            + ("n/a" if report.risk_score is None else f"{report.risk_score:.4f}"),
            "language        "
            + (
                "n/a"
                if report.language_score is None
                else f"{report.language_score:.4f}"
            ),
            f"tx error rate   {report.transactional_error_rate:.4f}",
            f"faq error rate  {report.faq_error_rate:.4f}",
            f"gates           {'pass' if report.gates_passed else 'FAIL'}",
        ]
        failures = [r for r in report.case_results if not r.correct]
        if failures:
            lines.append("failures:")
            for r in failures:
                lines.append(f"  {r.case_id} [{r.kind}] {r.detail}")
        return "\n".join(lines)
    raise ValueError(f"unknown format {fmt!r}")
