"""Desk-scale bank simulator.

Accounts and ledger, the bank directory, pre-execution checks (balance,
limits, AML), the RM250 second-factor policy, and the human-in-the-loop
transaction state machine. Amounts are integer minor units (sen)
throughout; executed transfers debit the sender and credit an external
sink, so total value is conserved.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import TYPE_CHECKING, Callable, Protocol

from .errors import BankChatError, UnknownAccount
from .serialization import Money

if TYPE_CHECKING:
    from .payment import TransferDraft

# Regulatory threshold: RM250 in sen. 2FA applies strictly above it.
DEFAULT_2FA_THRESHOLD = 25_000


class TwoFaRequired(BankChatError):
    """Approve attempted without a valid second factor."""


class InvalidState(BankChatError):
    """Decision applied to a transaction outside AwaitingDecision."""


class StaleEdit(BankChatError):
    """Edited fields failed revalidation; the original draft stands."""


class UnknownTransaction(BankChatError):
    pass


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class FakeClock:
    """Settable clock for expiry and day-boundary tests."""

    def __init__(self, start: datetime | None = None):
        self._now = start or datetime(2026, 1, 5, 3, 0, tzinfo=timezone.utc)

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float = 0.0, days: float = 0.0) -> None:
        self._now += timedelta(seconds=seconds, days=days)

    def set(self, value: datetime) -> None:
        self._now = value


class AccountStatus(str, Enum):
    ACTIVE = "active"
    FROZEN = "frozen"


class TransferKind(str, Enum):
    P2P = "P2P"
    P2M = "P2M"


class TxState(str, Enum):
    AWAITING_DECISION = "AwaitingDecision"
    APPROVED = "Approved"
    DECLINED = "Declined"
    EDITED = "Edited"
    EXECUTED = "Executed"
    FAILED = "Failed"


# The only legal state-machine edges; terminal states absorb.
TX_EDGES: dict[TxState, frozenset[TxState]] = {
    TxState.AWAITING_DECISION: frozenset(
        {TxState.APPROVED, TxState.DECLINED, TxState.EDITED}
    ),
    TxState.APPROVED: frozenset({TxState.EXECUTED, TxState.FAILED}),
    TxState.EDITED: frozenset({TxState.AWAITING_DECISION}),
    TxState.DECLINED: frozenset(),
    TxState.EXECUTED: frozenset(),
    TxState.FAILED: frozenset(),
}


class Decision(str, Enum):
    APPROVE = "approve"
    DECLINE = "decline"
    EDIT = "edit"


class PrecheckReason(str, Enum):
    INSUFFICIENT_FUNDS = "InsufficientFunds"
    LIMIT_EXCEEDED = "LimitExceeded"
    AML_FLAGGED = "AmlFlagged"


@dataclass(frozen=True)
class PrecheckResult:
    ok: bool
    reason: PrecheckReason | None = None


@dataclass
class Account:
    account_id: str
    holder_name: str
    balance: int
    status: AccountStatus = AccountStatus.ACTIVE
    daily_outflow: int = 0
    outflow_day: date | None = None

    def __post_init__(self) -> None:
        if self.balance < 0:
            raise ValueError("balance must be >= 0")
        if self.daily_outflow < 0:
            raise ValueError("daily outflow must be >= 0")


@dataclass(frozen=True)
class TwoFaPolicy:
    """P2P: per-transaction or cumulative-daily; P2M: per-transaction only."""

    threshold: int = DEFAULT_2FA_THRESHOLD
    p2p_cumulative_daily: bool = True
    p2m_cumulative_daily: bool = False

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")


@dataclass(frozen=True)
class TransferLimits:
    per_transaction: int = 5_000_000  # RM50,000
    daily: int = 10_000_000  # RM100,000


def requires_2fa(
    draft: "TransferDraft",
    kind: TransferKind,
    account: Account,
    policy: TwoFaPolicy,
) -> bool:
    """Second factor needed strictly above the threshold, never at it.

    For P2P the cumulative daily outflow counts; for P2M only the single
    transaction amount does.
    """
    amount = draft.amount
    if amount is None:
        raise ValueError("draft is incomplete: no amount")
    cumulative = (
        policy.p2p_cumulative_daily if kind is TransferKind.P2P else policy.p2m_cumulative_daily
    )
    if amount > policy.threshold:
        return True
    if cumulative and account.daily_outflow + amount > policy.threshold:
        return True
    return False


@dataclass
class PendingTransaction:
    tx_id: str
    session_id: str
    account_id: str
    draft: "TransferDraft"
    kind: TransferKind
    requires_2fa: bool
    state: TxState = TxState.AWAITING_DECISION
    fail_reason: str | None = None
    transitions: list[tuple[TxState, TxState]] = field(default_factory=list)

    def transition(self, to: TxState) -> None:
        if to not in TX_EDGES[self.state]:
            raise InvalidState(f"illegal transition {self.state.value} -> {to.value}")
        self.transitions.append((self.state, to))
        self.state = to

    def summary(self) -> dict[str, object]:
        return {
            "txId": self.tx_id,
            "recipientName": self.draft.recipient_name,
            "bankName": self.draft.bank_name,
            "accountNumber": self.draft.account_number,
            "amount": Money(self.draft.amount) if self.draft.amount is not None else None,
            "reference": self.draft.reference,
            "kind": self.kind.value,
            "requires2FA": self.requires_2fa,
        }


@dataclass(frozen=True)
class TransactionRecord:
    seq: int
    tx_id: str
    account_id: str
    direction: str
    amount: int
    counterparty_name: str
    counterparty_bank: str
    counterparty_account: str
    reference: str
    kind: TransferKind
    timestamp: datetime

    def to_jsonable(self) -> dict[str, object]:
        return {
            "seq": self.seq,
            "txId": self.tx_id,
            "accountId": self.account_id,
            "direction": self.direction,
            "amount": Money(self.amount).render(),
            "counterpartyName": self.counterparty_name,
            "counterpartyBank": self.counterparty_bank,
            "counterpartyAccount": self.counterparty_account,
            "reference": self.reference,
            "kind": self.kind.value,
            "timestamp": self.timestamp.isoformat(),
        }


class BankDirectory:
    """Supported bank names with aliases; lookups are case-insensitive."""

    def __init__(self, entries: list[dict]):
        self._canonical: dict[str, str] = {}
        self.entries = entries
        for entry in entries:
            name = entry["bankName"]
            self._canonical[name.casefold()] = name
            for alias in entry.get("aliases", []):
                self._canonical[alias.casefold()] = name

    @classmethod
    def load(cls, path: str) -> "BankDirectory":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __contains__(self, name: str) -> bool:
        return name.casefold() in self._canonical

    def resolve(self, name: str) -> str | None:
        return self._canonical.get(name.casefold())

    def find_in_text(self, text: str) -> str | None:
        """Return the canonical name of the first directory bank mentioned."""
        folded = text.casefold()
        best: tuple[int, int, str] | None = None
        for key, name in self._canonical.items():
            pos = folded.find(key)
            if pos != -1 and (best is None or (pos, -len(key)) < (best[0], -best[1])):
                best = (pos, len(key), name)
        return best[2] if best else None

    def names(self) -> list[str]:
        return sorted(set(self._canonical.values()))


class AmlList:
    """Watch list of counterparty identifiers and names (fixture-backed)."""

    def __init__(self, entries: list[str]):
        self._entries = {e.casefold().strip() for e in entries}

    @classmethod
    def load(cls, path: str) -> "AmlList":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(raw["entries"] if isinstance(raw, dict) else raw)

    def flags(self, draft: "TransferDraft") -> bool:
        candidates = [draft.account_number, draft.recipient_name]
        return any(c and c.casefold().strip() in self._entries for c in candidates)


class Bank:
    """In-memory ledger with serialized mutations and an injectable clock.

    ``draft_validator`` and ``kind_classifier`` are wired to the payment
    agent at bootstrap so Edit decisions revalidate through the same rules
    used for extraction.
    """

    def __init__(
        self,
        accounts: list[Account],
        directory: BankDirectory,
        aml: AmlList | None = None,
        limits: TransferLimits | None = None,
        twofa_policy: TwoFaPolicy | None = None,
        clock: Clock | None = None,
        tz_offset_hours: int = 8,
        audit_sink: Callable[[str, dict], None] | None = None,
        second_factor_verifier: Callable[[str, str | None], bool] | None = None,
        draft_validator: Callable[["TransferDraft"], tuple[bool, str]] | None = None,
        kind_classifier: Callable[["TransferDraft"], TransferKind] | None = None,
    ):
        self._accounts = {a.account_id: a for a in accounts}
        self.directory = directory
        self.aml = aml or AmlList([])
        self.limits = limits or TransferLimits()
        self.twofa_policy = twofa_policy or TwoFaPolicy()
        self.clock: Clock = clock or SystemClock()
        self.tz_offset_hours = tz_offset_hours
        self._audit_sink = audit_sink
        self._verify_second_factor = second_factor_verifier or (lambda sid, proof: False)
        self._draft_validator = draft_validator
        self._kind_classifier = kind_classifier
        self._pending: dict[str, PendingTransaction] = {}
        self._records: list[TransactionRecord] = []
        self.external_sink_total = 0
        self._lock = threading.RLock()
        self._tx_counter = 0
        self._record_counter = 0

    # -- helpers ------------------------------------------------------------

    def _today(self) -> date:
        return (self.clock.now() + timedelta(hours=self.tz_offset_hours)).date()

    def _account(self, account_id: str) -> Account:
        account = self._accounts.get(account_id)
        if account is None:
            raise UnknownAccount(account_id)
        if account.outflow_day != self._today():
            account.daily_outflow = 0
            account.outflow_day = self._today()
        return account

    def _audit(self, kind: str, labels: dict) -> None:
        if self._audit_sink is not None:
            self._audit_sink(kind, labels)

    def set_audit_sink(self, sink: Callable[[str, dict], None]) -> None:
        self._audit_sink = sink

    def emit_audit(self, kind: str, labels: dict) -> None:
        self._audit(kind, labels)

    def set_second_factor_verifier(self, verifier: Callable[[str, str | None], bool]) -> None:
        self._verify_second_factor = verifier

    def set_draft_validator(self, validator: Callable[["TransferDraft"], tuple[bool, str]]) -> None:
        self._draft_validator = validator

    def set_kind_classifier(self, classifier: Callable[["TransferDraft"], TransferKind]) -> None:
        self._kind_classifier = classifier

    def has_account(self, account_id: str) -> bool:
        return account_id in self._accounts

    def account_ids(self) -> list[str]:
        return sorted(self._accounts)

    def total_balance(self) -> int:
        return sum(a.balance for a in self._accounts.values())

    def pending_transaction(self, tx_id: str) -> PendingTransaction:
        tx = self._pending.get(tx_id)
        if tx is None:
            raise UnknownTransaction(tx_id)
        return tx

    # -- checks -------------------------------------------------------------

    def requires_2fa_for(self, draft: "TransferDraft", kind: TransferKind, account_id: str) -> bool:
        with self._lock:
            account = self._account(account_id)
            return requires_2fa(draft, kind, account, self.twofa_policy)

    def precheck(self, draft: "TransferDraft", account_id: str) -> PrecheckResult:
        """Balance, then limits, then AML; first failure wins."""
        with self._lock:
            account = self._account(account_id)
            amount = draft.amount
            if amount is None:
                raise ValueError("draft is incomplete: no amount")
            if amount > account.balance:
                return PrecheckResult(False, PrecheckReason.INSUFFICIENT_FUNDS)
            if amount > self.limits.per_transaction:
                return PrecheckResult(False, PrecheckReason.LIMIT_EXCEEDED)
            if account.daily_outflow + amount > self.limits.daily:
                return PrecheckResult(False, PrecheckReason.LIMIT_EXCEEDED)
            if self.aml.flags(draft):
                return PrecheckResult(False, PrecheckReason.AML_FLAGGED)
            return PrecheckResult(True)

    def create_pending(
        self, draft: "TransferDraft", kind: TransferKind, session_id: str, account_id: str
    ) -> PendingTransaction:
        """Register a confirmable transaction. Never executes anything."""
        with self._lock:
            account = self._account(account_id)
            self._tx_counter += 1
            tx = PendingTransaction(
                tx_id=f"tx-{self._tx_counter:06d}",
                session_id=session_id,
                account_id=account_id,
                draft=draft,
                kind=kind,
                requires_2fa=requires_2fa(draft, kind, account, self.twofa_policy),
            )
            self._pending[tx.tx_id] = tx
            return tx

    # -- decisions ----------------------------------------------------------

    def decide(
        self,
        tx_id: str,
        decision: Decision,
        second_factor: str | None = None,
        new_fields: dict[str, object] | None = None,
    ) -> PendingTransaction:
        """Resolve the explicit human decision: approve, decline, or edit.

        Approval executes atomically (debit, record, daily outflow) after a
        fresh precheck; any failure there lands in Failed without a ledger
        change. Every decision emits an audit event.
        """
        with self._lock:
            tx = self.pending_transaction(tx_id)
            if tx.state is not TxState.AWAITING_DECISION:
                raise InvalidState(f"transaction {tx_id} is {tx.state.value}")
            if decision is Decision.DECLINE:
                tx.transition(TxState.DECLINED)
                self._audit("decision", self._decision_labels(tx, decision))
                return tx
            if decision is Decision.EDIT:
                self._apply_edit(tx, new_fields or {})
                self._audit("decision", self._decision_labels(tx, decision))
                return tx
            # Approve.
            if tx.requires_2fa and not self._verify_second_factor(tx.session_id, second_factor):
                raise TwoFaRequired(tx.tx_id)
            tx.transition(TxState.APPROVED)
            check = self.precheck(tx.draft, tx.account_id)
            if not check.ok:
                tx.fail_reason = check.reason.value if check.reason else "precheck"
                tx.transition(TxState.FAILED)
                self._audit("decision", self._decision_labels(tx, decision))
                return tx
            self._execute(tx)
            self._audit("decision", self._decision_labels(tx, decision))
            return tx

    def _decision_labels(self, tx: PendingTransaction, decision: Decision) -> dict:
        return {
            "txId": tx.tx_id,
            "decision": decision.value,
            "state": tx.state.value,
            "kind": tx.kind.value,
            "requires2FA": tx.requires_2fa,
            "failReason": tx.fail_reason,
        }

    def _apply_edit(self, tx: PendingTransaction, new_fields: dict[str, object]) -> None:
        allowed = {"recipient_name", "bank_name", "account_number", "amount", "reference"}
        unknown = set(new_fields) - allowed
        if unknown:
            raise StaleEdit(f"unknown fields: {sorted(unknown)}")
        for name, value in new_fields.items():
            # Amounts arrive here already parsed to integer minor units;
            # anything else is a caller bug surfaced as a stale edit.
            if name == "amount":
                if isinstance(value, bool) or not isinstance(value, (int, type(None))):
                    raise StaleEdit("amount must be integer minor units")
            elif value is not None and not isinstance(value, str):
                raise StaleEdit(f"{name} must be a string")
        merged = replace(tx.draft, **new_fields)
        ok, detail = self._validate_draft(merged)
        if not ok:
            raise StaleEdit(detail)
        tx.transition(TxState.EDITED)
        tx.draft = merged
        if self._kind_classifier is not None:
            tx.kind = self._kind_classifier(merged)
        account = self._account(tx.account_id)
        tx.requires_2fa = requires_2fa(merged, tx.kind, account, self.twofa_policy)
        tx.transition(TxState.AWAITING_DECISION)

    def _validate_draft(self, draft: "TransferDraft") -> tuple[bool, str]:
        if self._draft_validator is not None:
            return self._draft_validator(draft)
        missing = [
            name
            for name, value in (
                ("recipientName", draft.recipient_name),
                ("bankName", draft.bank_name),
                ("accountNumber", draft.account_number),
                ("amount", draft.amount),
            )
            if value is None
        ]
        if missing:
            return False, f"missing fields: {missing}"
        if draft.amount is not None and draft.amount <= 0:
            return False, "amount must be greater than zero"
        if draft.bank_name is not None and draft.bank_name not in self.directory:
            return False, f"unsupported bank: {draft.bank_name}"
        return True, "ok"

    def _execute(self, tx: PendingTransaction) -> None:
        account = self._account(tx.account_id)
        amount = tx.draft.amount
        assert amount is not None
        account.balance -= amount
        account.daily_outflow += amount
        self.external_sink_total += amount
        self._record_counter += 1
        self._records.append(
            TransactionRecord(
                seq=self._record_counter,
                tx_id=tx.tx_id,
                account_id=tx.account_id,
                direction="debit",
                amount=amount,
                counterparty_name=tx.draft.recipient_name or "",
                counterparty_bank=tx.draft.bank_name or "",
                counterparty_account=tx.draft.account_number or "",
                reference=tx.draft.reference,
                kind=tx.kind,
                timestamp=self.clock.now(),
            )
        )
        tx.transition(TxState.EXECUTED)

    def expire_pending(self, tx_id: str) -> PendingTransaction | None:
        """Force-decline an open transaction when its session closes."""
        with self._lock:
            tx = self._pending.get(tx_id)
            if tx is None or tx.state is not TxState.AWAITING_DECISION:
                return None
            tx.fail_reason = "expired"
            tx.transition(TxState.DECLINED)
            self._audit("decision", self._decision_labels(tx, Decision.DECLINE))
            return tx

    # -- queries ------------------------------------------------------------

    def query_account(self, account_id: str) -> Account:
        with self._lock:
            account = self._account(account_id)
            return replace(account)

    def account_summary(self, account_id: str) -> dict[str, object]:
        account = self.query_account(account_id)
        return {
            "accountNumber": account.account_id,
            "holderName": account.holder_name,
            "availableBalance": Money(account.balance),
            "status": account.status.value,
        }

    def query_history(
        self,
        account_id: str,
        since: datetime | None = None,
        until: datetime | None = None,
    ) -> list[TransactionRecord]:
        with self._lock:
            self._account(account_id)
            records = [
                r
                for r in self._records
                if r.account_id == account_id
                and (since is None or r.timestamp >= since)
                and (until is None or r.timestamp <= until)
            ]
            return sorted(records, key=lambda r: (r.timestamp, r.seq), reverse=True)

    def export_records_jsonl(self, path: str) -> int:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for record in self._records:
                fh.write(json.dumps(record.to_jsonable(), ensure_ascii=False) + "\n")
            return len(self._records)


def load_accounts(path: str) -> list[Account]:
    """Seed accounts from JSON: balances given in major units as strings."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    accounts = []
    for entry in raw:
        accounts.append(
            Account(
                account_id=entry["accountId"],
                holder_name=entry["holderName"],
                balance=Money.from_major(entry["balance"]).minor,
                status=AccountStatus(entry.get("status", "active")),
            )
        )
    return accounts
