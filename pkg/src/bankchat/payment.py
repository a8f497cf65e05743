"""Transfer action agent.

Pulls the five transfer fields (recipient, bank, account, amount,
reference) out of free text, pictures of receipts, and earlier turns,
then validates them against banking rules and walks the user through
clarification until exactly one confirmable draft remains. Submission
never executes: it registers a pending transaction for the explicit
human decision.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

from .banking import Bank, BankDirectory, PendingTransaction, PrecheckReason, TransferKind
from .backend import (
    AdapterSpec,
    Backend,
    RETRY_LIMIT,
    complete_structured,
    register_schema,
    render_prompt,
)
from .envelope import AttachmentRef, ChatTurn, ModelCallRecord, Role, user_turn
from .errors import BankChatError, OcrUnavailable, SchemaViolation
from .serialization import Money, register_output_type

DEFAULT_REFERENCE = "Funds Transfer"

EXTRACTION_APOLOGY = (
    "Sorry, I couldn't read the transfer details just now. Could you try again?"
)
OCR_FALLBACK_MESSAGE = (
    "I couldn't read that image. Could you type the transfer details instead?"
)

# Words that can follow "to" without naming a person.
_RECIPIENT_STOPWORDS = {
    "a", "an", "acc", "account", "bank", "her", "him", "make", "me", "my",
    "pay", "rm", "send", "she", "that", "the", "them", "this", "transfer",
}


class IdentifierKind(str, Enum):
    ACCOUNT = "account"
    PHONE = "phone"
    NRIC = "nric"
    BUSINESS = "business"


@dataclass(frozen=True)
class TransferDraft:
    """One candidate transfer; completeness is judged by validateDraft,
    so partially filled and even invalid drafts are constructible."""

    recipient_name: str | None = None
    bank_name: str | None = None
    account_number: str | None = None
    amount: int | None = None  # minor units
    reference: str = DEFAULT_REFERENCE

    def __post_init__(self) -> None:
        if not self.reference:
            raise ValueError("reference must be non-empty")


@dataclass(frozen=True)
class PaymentAgentResult:
    transfers: tuple[TransferDraft, ...]
    message: str

    def __post_init__(self) -> None:
        if not self.message:
            raise ValueError("message must be non-empty")


class CompletionKind(str, Enum):
    INCOMPLETE = "Incomplete"
    INVALID = "Invalid"
    AWAITING_DISAMBIGUATION = "AwaitingDisambiguation"
    READY_FOR_CONFIRMATION = "ReadyForConfirmation"


@dataclass(frozen=True)
class CompletionState:
    kind: CompletionKind
    missing_fields: tuple[str, ...] = ()
    field_errors: tuple[tuple[str, str], ...] = ()
    count: int = 0

    @classmethod
    def incomplete(cls, missing: Sequence[str]) -> "CompletionState":
        return cls(CompletionKind.INCOMPLETE, missing_fields=tuple(missing))

    @classmethod
    def invalid(cls, errors: dict[str, str]) -> "CompletionState":
        return cls(CompletionKind.INVALID, field_errors=tuple(sorted(errors.items())))

    @classmethod
    def awaiting(cls, count: int) -> "CompletionState":
        return cls(CompletionKind.AWAITING_DISAMBIGUATION, count=count)

    @classmethod
    def ready(cls) -> "CompletionState":
        return cls(CompletionKind.READY_FOR_CONFIRMATION)


# -- wire format ------------------------------------------------------------

_DRAFT_KEYS = {"recipientName", "bankName", "accountNumber", "amount", "reference"}


def _draft_to_jsonable(draft: TransferDraft) -> dict:
    return {
        "recipientName": draft.recipient_name,
        "bankName": draft.bank_name,
        "accountNumber": draft.account_number,
        "amount": Money(draft.amount) if draft.amount is not None else None,
        "reference": draft.reference,
    }


def _result_to_jsonable(result: PaymentAgentResult) -> dict:
    return {
        "transfers": [_draft_to_jsonable(d) for d in result.transfers],
        "message": result.message,
    }


def _optional_str(raw: dict, key: str) -> str | None:
    value = raw[key]
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaViolation(f"{key} must be a string or null")
    return value or None


def _draft_from_jsonable(raw: object) -> TransferDraft:
    if not isinstance(raw, dict):
        raise SchemaViolation("transfer entry must be an object")
    if set(raw) != _DRAFT_KEYS:
        raise SchemaViolation(f"transfer keys must be exactly {sorted(_DRAFT_KEYS)}")
    amount_raw = raw["amount"]
    amount: int | None
    if amount_raw is None:
        amount = None
    elif isinstance(amount_raw, bool):
        raise SchemaViolation("amount must be a number")
    else:
        try:
            amount = Money.from_major(amount_raw).minor
        except (ValueError, ArithmeticError) as exc:
            raise SchemaViolation(f"bad amount {amount_raw!r}") from exc
    reference = raw["reference"]
    if reference is not None and not isinstance(reference, str):
        raise SchemaViolation("reference must be a string or null")
    return TransferDraft(
        recipient_name=_optional_str(raw, "recipientName"),
        bank_name=_optional_str(raw, "bankName"),
        account_number=_optional_str(raw, "accountNumber"),
        amount=amount,
        reference=reference or DEFAULT_REFERENCE,
    )


def _result_from_jsonable(raw: object) -> PaymentAgentResult:
    if not isinstance(raw, dict):
        raise SchemaViolation("payment result must be an object")
    if set(raw) != {"transfers", "message"}:
        raise SchemaViolation("payment result keys must be exactly transfers, message")
    transfers, message = raw["transfers"], raw["message"]
    if not isinstance(transfers, list):
        raise SchemaViolation("transfers must be an array")
    if not isinstance(message, str) or not message:
        raise SchemaViolation("message must be a non-empty string")
    return PaymentAgentResult(
        transfers=tuple(_draft_from_jsonable(d) for d in transfers), message=message
    )


register_output_type(
    "payment_result", PaymentAgentResult, _result_to_jsonable, _result_from_jsonable
)
register_schema("payment_result", _result_from_jsonable)


# -- identifier rules -------------------------------------------------------

_PHONE_RE = re.compile(r"01\d{8,9}\Z")
_NRIC_RE = re.compile(r"\d{12}\Z")
_ACCOUNT_RE = re.compile(r"\d{6,20}\Z")
_BUSINESS_RE = re.compile(r"(?=.*[A-Za-z])(?=.*\d)[A-Za-z\d-]{4,20}\Z")


def classify_identifier(identifier: str) -> IdentifierKind | None:
    """Most specific format wins: phone, then NRIC, then account digits,
    then alphanumeric business codes."""
    if _PHONE_RE.match(identifier):
        return IdentifierKind.PHONE
    if _NRIC_RE.match(identifier):
        return IdentifierKind.NRIC
    if _ACCOUNT_RE.match(identifier):
        return IdentifierKind.ACCOUNT
    if _BUSINESS_RE.match(identifier):
        return IdentifierKind.BUSINESS
    return None


def transfer_kind(draft: TransferDraft) -> TransferKind:
    """Business identifiers mean merchant payments; everything else is P2P."""
    if draft.account_number is None:
        return TransferKind.P2P
    kind = classify_identifier(draft.account_number)
    return TransferKind.P2M if kind is IdentifierKind.BUSINESS else TransferKind.P2P


# -- field extraction -------------------------------------------------------

_RM_AMOUNT_RE = re.compile(r"\bRM\s?(\d[\d,]*(?:\.\d+)?)", re.IGNORECASE)
_BARE_AMOUNT_RE = re.compile(r"(?<![\w.])(\d{1,3}(?:,\d{3})*(?:\.\d{1,2})?)(?![\w.])")
_LABELED_ACCOUNT_RE = re.compile(
    r"(?:account|acc|a/c)\b\D{0,24}?(\d{6,20})\b", re.IGNORECASE
)
_PHONE_IN_TEXT_RE = re.compile(r"\b(01\d{8,9})\b")
_LONG_DIGITS_RE = re.compile(r"(?<![\d.])(\d{8,20})(?![\d.])")
_BUSINESS_LABELED_RE = re.compile(
    r"(?:business|merchant|biz)\s*(?:id|code|no\.?|number)?\s*[:\-]?\s*([A-Za-z\d-]{4,20})",
    re.IGNORECASE,
)
_BUSINESS_BARE_RE = re.compile(r"\b([A-Z]{2,8}-?\d{2,12})\b")
_RECIPIENT_RE = re.compile(r"\b[Tt]o:?\s+([A-Za-z][A-Za-z']*(?:\s+[A-Z][A-Za-z']*)*)")
_REFERENCE_LABELED_RE = re.compile(
    r"\breference\s*[:\-]?\s*\"?([^\".!?\n]+)\"?", re.IGNORECASE
)
_REFERENCE_FOR_RE = re.compile(
    r"\bfor\s+(?!RM\d)([A-Za-z][A-Za-z ]{0,40}?)"
    r"(?=[.!?,;]|$|\s+and\b|\s+at\b|\s+account\b|\s+to\b|\s+from\b)",
    re.IGNORECASE,
)
_CLAUSE_SPLIT_RE = re.compile(r"\s+and\s+|\s*;\s*|\s*,\s*then\s+", re.IGNORECASE)


def _mask(text: str, spans: list[tuple[int, int]]) -> str:
    chars = list(text)
    for start, end in spans:
        for i in range(start, end):
            chars[i] = " "
    return "".join(chars)


def _to_minor(literal: str) -> int | None:
    try:
        return Money.from_major(literal.replace(",", "")).minor
    except (ValueError, ArithmeticError):
        return None


def _find_account(text: str) -> tuple[str | None, list[tuple[int, int]]]:
    """Return the best identifier candidate plus every span to mask."""
    spans: list[tuple[int, int]] = []
    best: str | None = None
    for pattern in (_LABELED_ACCOUNT_RE, _PHONE_IN_TEXT_RE, _BUSINESS_LABELED_RE,
                    _BUSINESS_BARE_RE, _LONG_DIGITS_RE):
        for match in pattern.finditer(text):
            candidate = match.group(1)
            if classify_identifier(candidate) is None:
                continue
            spans.append(match.span(1))
            if best is None:
                best = candidate
    return best, spans


def extract_partial(text: str, directory: BankDirectory) -> dict[str, object]:
    """Fields stated in one message; absent keys mean 'not mentioned'."""
    found: dict[str, object] = {}

    rm_spans = [m.span() for m in _RM_AMOUNT_RE.finditer(text)]
    rm_amounts = [
        minor
        for m in _RM_AMOUNT_RE.finditer(text)
        if (minor := _to_minor(m.group(1))) is not None
    ]
    unlabeled = _mask(text, rm_spans)
    account, account_spans = _find_account(unlabeled)
    if account is not None:
        found["account_number"] = account

    if rm_amounts:
        amounts = rm_amounts
    else:
        masked = _mask(unlabeled, account_spans)
        amounts = [
            minor
            for m in _BARE_AMOUNT_RE.finditer(masked)
            if len(m.group(1).replace(",", "").split(".")[0]) <= 7
            and (minor := _to_minor(m.group(1))) is not None
        ]
    # One clearly stated amount fills the field; several distinct ones are
    # ambiguous and stay unfilled for clarification.
    if len(set(amounts)) == 1:
        found["amount"] = amounts[0]

    bank = directory.find_in_text(text)
    if bank is not None:
        found["bank_name"] = bank

    recipient = _find_recipient(text, directory)
    if recipient is not None:
        found["recipient_name"] = recipient

    reference = _find_reference(text)
    if reference is not None:
        found["reference"] = reference
    return found


def _find_recipient(text: str, directory: BankDirectory) -> str | None:
    for match in _RECIPIENT_RE.finditer(text):
        words = [re.sub(r"'s?\Z", "", w) for w in match.group(1).split()]
        while words and (
            words[-1].casefold() in _RECIPIENT_STOPWORDS or words[-1] in directory
        ):
            words.pop()
        if not words:
            continue
        if words[0].casefold() in _RECIPIENT_STOPWORDS or " ".join(words) in directory:
            continue
        name = " ".join(words)
        return name[0].upper() + name[1:] if name[0].islower() else name

    return None


def _find_reference(text: str) -> str | None:
    match = _REFERENCE_LABELED_RE.search(text)
    if match:
        value = match.group(1).strip()
        if value:
            return value
    match = _REFERENCE_FOR_RE.search(text)
    if match:
        value = match.group(1).strip()
        if value and value.casefold() not in _RECIPIENT_STOPWORDS:
            return value[0].upper() + value[1:]
    return None


def _split_clauses(text: str) -> list[str]:
    """Break a message into per-transfer clauses; only splits that leave an
    amount and a recipient in every part count as multiple transfers."""
    parts = [p for p in _CLAUSE_SPLIT_RE.split(text) if p.strip()]
    if len(parts) < 2:
        return [text]
    for part in parts:
        if not _RECIPIENT_RE.search(part):
            return [text]
        if not (_RM_AMOUNT_RE.search(part) or _BARE_AMOUNT_RE.search(part)):
            return [text]
    return parts


def extract_transfers(
    text: str, history: Sequence[ChatTurn], directory: BankDirectory
) -> list[TransferDraft]:
    """Merge fields across the user's turns, newest statement winning,
    then split the current message into one draft per transfer clause."""
    carried: dict[str, object] = {}
    for turn in history:
        if turn.role is Role.USER and turn.text:
            carried.update(extract_partial(turn.text, directory))
    drafts = []
    for clause in _split_clauses(text):
        fields = {**carried, **extract_partial(clause, directory)}
        if fields:
            drafts.append(TransferDraft(**fields))
    return drafts


# -- validation -------------------------------------------------------------

_FIELD_ORDER = ("recipientName", "bankName", "accountNumber", "amount")


def validate_draft(draft: TransferDraft, directory: BankDirectory) -> CompletionState:
    """Pure check: rule violations first, then gaps, then ready."""
    errors: dict[str, str] = {}
    if draft.amount is not None and draft.amount <= 0:
        errors["amount"] = "must be greater than zero"
    if draft.bank_name is not None and draft.bank_name not in directory:
        errors["bankName"] = f"{draft.bank_name} is not a supported bank"
    if draft.account_number is not None and classify_identifier(draft.account_number) is None:
        errors["accountNumber"] = f"{draft.account_number} is not a recognized identifier"
    if not draft.reference.strip():
        errors["reference"] = "must be non-empty"
    if errors:
        return CompletionState.invalid(errors)
    missing = [
        name
        for name, value in zip(
            _FIELD_ORDER,
            (draft.recipient_name, draft.bank_name, draft.account_number, draft.amount),
        )
        if value is None
    ]
    if missing:
        return CompletionState.incomplete(missing)
    return CompletionState.ready()


def completion_state(
    drafts: Sequence[TransferDraft], directory: BankDirectory
) -> CompletionState:
    if len(drafts) == 0:
        return CompletionState.incomplete(_FIELD_ORDER)
    if len(drafts) > 1:
        return CompletionState.awaiting(len(drafts))
    return validate_draft(drafts[0], directory)


# -- clarification messages -------------------------------------------------

def _describe_draft(draft: TransferDraft) -> str:
    amount = f"RM{Money(draft.amount).render()}" if draft.amount is not None else "an amount"
    target = draft.recipient_name or draft.account_number or "the recipient"
    return f"{amount} to {target}"


def compose_message(state: CompletionState, drafts: Sequence[TransferDraft]) -> str:
    if state.kind is CompletionKind.READY_FOR_CONFIRMATION:
        draft = drafts[0]
        return (
            f"You're transferring RM{Money(draft.amount).render()} to "
            f"{draft.recipient_name} at {draft.bank_name}, account "
            f"{draft.account_number}, reference {draft.reference}. "
            "Please review and confirm."
        )
    if state.kind is CompletionKind.AWAITING_DISAMBIGUATION:
        options = "; ".join(
            f"{i}) {_describe_draft(d)}" for i, d in enumerate(drafts, start=1)
        )
        return (
            "I can only process one transfer at a time. "
            f"Which would you like to process first? {options}"
        )
    if state.kind is CompletionKind.INVALID:
        parts = []
        for fid, detail in state.field_errors:
            if fid == "bankName":
                parts.append(f"{detail}. Could you check the bank name?")
            elif fid == "amount":
                parts.append(f"The amount {detail}.")
            else:
                parts.append(f"The {fid} {detail}.")
        return " ".join(parts)
    # Incomplete: ask for the most blocking gap first.
    missing = set(state.missing_fields)
    draft = drafts[0] if drafts else TransferDraft()
    if "recipientName" in missing:
        return "Who would you like to transfer to?"
    if "bankName" in missing or "accountNumber" in missing:
        return f"Could you provide the bank account details of {draft.recipient_name}?"
    return "How much would you like to transfer?"


# -- disambiguation ---------------------------------------------------------

_ORDINALS = {
    "first": 0, "1st": 0, "second": 1, "2nd": 1, "third": 2, "3rd": 2,
    "fourth": 3, "4th": 3, "fifth": 4, "5th": 4,
}


def resolve_multiple(result: PaymentAgentResult) -> PaymentAgentResult:
    """Single-transfer rule: two or more drafts become a which-first
    question; every draft is retained for the follow-up answer."""
    if len(result.transfers) < 2:
        return result
    state = CompletionState.awaiting(len(result.transfers))
    return replace(result, message=compose_message(state, result.transfers))


def select_draft(text: str, drafts: Sequence[TransferDraft]) -> TransferDraft | None:
    tokens = re.findall(r"[a-z\d]+(?:st|nd|rd|th)?", text.casefold())
    for token in tokens:
        if token in _ORDINALS and _ORDINALS[token] < len(drafts):
            return drafts[_ORDINALS[token]]
    for token in tokens:
        if token.isdigit() and 1 <= int(token) <= len(drafts):
            return drafts[int(token) - 1]
    for draft in drafts:
        name = (draft.recipient_name or "").casefold()
        if name and name in tokens:
            return draft
    return None


# -- OCR fixture ------------------------------------------------------------

class OcrFixtureStore:
    """Attachment id -> transcription map standing in for a real engine."""

    def __init__(self, transcripts: dict[str, str]):
        self._transcripts = dict(transcripts)

    @classmethod
    def load(cls, path: str) -> "OcrFixtureStore":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        entries = raw["fixtures"] if isinstance(raw, dict) else raw
        return cls({e["attachmentId"]: e["text"] for e in entries})

    def extract(self, attachment: AttachmentRef) -> str:
        text = self._transcripts.get(attachment.attachment_id)
        if text is None:
            raise OcrUnavailable(attachment.attachment_id)
        return text


# -- execution handoff ------------------------------------------------------

class PrecheckRejected(BankChatError):
    """A banking pre-check refused the draft; subclass fixes the message."""

    reason: PrecheckReason
    user_message: str


class InsufficientFunds(PrecheckRejected):
    reason = PrecheckReason.INSUFFICIENT_FUNDS
    user_message = "Your balance isn't enough to cover this transfer."


class LimitExceeded(PrecheckRejected):
    reason = PrecheckReason.LIMIT_EXCEEDED
    user_message = "This transfer would exceed your transfer limits."


class AmlFlagged(PrecheckRejected):
    reason = PrecheckReason.AML_FLAGGED
    user_message = (
        "This transfer can't be processed right now. "
        "Please contact the Help & Support Center."
    )


_PRECHECK_REJECTIONS: dict[PrecheckReason, type[PrecheckRejected]] = {
    cls.reason: cls for cls in (InsufficientFunds, LimitExceeded, AmlFlagged)
}


def submit_for_execution(
    draft: TransferDraft, session_id: str, account_id: str, bank: Bank
) -> PendingTransaction:
    """Run the pre-checks and park the transfer for the human decision."""
    check = bank.precheck(draft, account_id)
    kind = transfer_kind(draft)
    if not check.ok:
        assert check.reason is not None
        bank.emit_audit(
            "precheck_rejected",
            {"reason": check.reason.value, "kind": kind.value, "sessionId": session_id},
        )
        raise _PRECHECK_REJECTIONS[check.reason](check.reason.value)
    return bank.create_pending(draft, kind, session_id, account_id)


def draft_validator(directory: BankDirectory) -> Callable[[TransferDraft], tuple[bool, str]]:
    """Adapter so the bank revalidates Edit decisions with these rules."""

    def validate(draft: TransferDraft) -> tuple[bool, str]:
        state = validate_draft(draft, directory)
        if state.kind is CompletionKind.READY_FOR_CONFIRMATION:
            return True, "ok"
        if state.kind is CompletionKind.INCOMPLETE:
            return False, f"missing fields: {list(state.missing_fields)}"
        return False, "; ".join(f"{k}: {v}" for k, v in state.field_errors)

    return validate


# -- agent ------------------------------------------------------------------

@dataclass
class PaymentOutcome:
    result: PaymentAgentResult
    state: CompletionState
    pending: PendingTransaction | None = None
    retained_drafts: tuple[TransferDraft, ...] = ()
    record: ModelCallRecord | None = None


class PaymentAgent:
    def __init__(
        self,
        spec: AdapterSpec,
        backend: Backend,
        bank: Bank,
        ocr: OcrFixtureStore | None = None,
        retry_limit: int = RETRY_LIMIT,
    ):
        self.spec = spec
        self.backend = backend
        self.bank = bank
        self.directory = bank.directory
        self.ocr = ocr or OcrFixtureStore({})
        self.retry_limit = retry_limit

    def ocr_extract(self, attachment: AttachmentRef) -> str:
        return self.ocr.extract(attachment)

    def extract_fields(
        self, turn: ChatTurn, history: Sequence[ChatTurn], ocr_text: str | None = None
    ) -> tuple[PaymentAgentResult, ModelCallRecord | None]:
        effective = f"{turn.text}\n{ocr_text}".strip() if ocr_text else turn.text
        convo = list(history) + [user_turn(effective)]
        prompt = render_prompt(self.spec, {"bank_names": ", ".join(self.directory.names())})
        try:
            value, record = complete_structured(
                self.spec, prompt, convo, self.backend, self.retry_limit
            )
            return value, record
        except SchemaViolation:
            return PaymentAgentResult(transfers=(), message=EXTRACTION_APOLOGY), None

    def process(
        self,
        turn: ChatTurn,
        history: Sequence[ChatTurn],
        session_id: str,
        account_id: str,
        retained_drafts: Sequence[TransferDraft] = (),
    ) -> PaymentOutcome:
        """One PAYMENT turn: disambiguation answer, OCR, extraction,
        validation, and (when ready) handoff to the pending queue."""
        record: ModelCallRecord | None = None
        from_selection = bool(retained_drafts)
        if retained_drafts:
            selected = select_draft(turn.text, retained_drafts)
            if selected is None:
                state = CompletionState.awaiting(len(retained_drafts))
                return PaymentOutcome(
                    result=PaymentAgentResult(
                        transfers=tuple(retained_drafts),
                        message=compose_message(state, retained_drafts),
                    ),
                    state=state,
                    retained_drafts=tuple(retained_drafts),
                )
            drafts: list[TransferDraft] = [selected]
            result = PaymentAgentResult(
                transfers=(selected,), message=_describe_draft(selected)
            )
        else:
            ocr_text = None
            if turn.attachments:
                try:
                    ocr_text = "\n".join(self.ocr_extract(a) for a in turn.attachments)
                except OcrUnavailable:
                    state = CompletionState.incomplete(_FIELD_ORDER)
                    return PaymentOutcome(
                        result=PaymentAgentResult(
                            transfers=(), message=OCR_FALLBACK_MESSAGE
                        ),
                        state=state,
                    )
            result, record = self.extract_fields(turn, history, ocr_text)
            drafts = list(result.transfers)

        state = completion_state(drafts, self.directory)
        if state.kind is CompletionKind.AWAITING_DISAMBIGUATION:
            result = resolve_multiple(result)
            return PaymentOutcome(
                result=result,
                state=state,
                retained_drafts=tuple(drafts),
                record=record,
            )
        if state.kind is CompletionKind.READY_FOR_CONFIRMATION:
            try:
                pending = submit_for_execution(drafts[0], session_id, account_id, self.bank)
            except PrecheckRejected as exc:
                return PaymentOutcome(
                    result=replace(result, message=exc.user_message),
                    state=state,
                    record=record,
                )
            return PaymentOutcome(
                result=replace(result, message=compose_message(state, drafts)),
                state=state,
                pending=pending,
                record=record,
            )
        # Incomplete or invalid: the backend already phrased the
        # clarification; selection answers need one composed here.
        if from_selection:
            result = replace(result, message=compose_message(state, drafts))
        return PaymentOutcome(result=result, state=state, record=record)
