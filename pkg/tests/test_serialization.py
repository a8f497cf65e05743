"""Canonical wire-format tests.

The byte-level goldens here were written by hand from the wire rules
(sorted keys, compact separators, bare two-decimal currency literals)
before the serializer existed; they pin the format, not the code.
"""

import hashlib
import json
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from bankchat.guardrails import GuardrailVerdict, ViolationCategory, safe_verdict
from bankchat.intent import IntentCategory, IntentResult
from bankchat.payment import PaymentAgentResult, TransferDraft
from bankchat.serialization import (
    Money,
    canonical_parse,
    canonical_serialize,
    type_name_of,
)
from bankchat.errors import UnknownType


GOLDEN_PAYMENT = (
    b'{"message":"ok","transfers":[{"accountNumber":"5512345678",'
    b'"amount":1000.00,"bankName":"Bank ABC","recipientName":"John",'
    b'"reference":"Funds Transfer"}]}'
)
GOLDEN_PAYMENT_SHA = "bd2af47fd8757b9407a9113ad2686fefe9d2534e0e4166d396dfc1e0b7880012"


def test_money_renders_two_decimals():
    assert Money(100000).render() == "1000.00"
    assert Money(5).render() == "0.05"
    assert Money(120050).render() == "1200.50"
    assert Money(-250).render() == "-2.50"
    assert Money(0).render() == "0.00"


def test_money_from_major_is_exact():
    assert Money.from_major("500").minor == 50000
    assert Money.from_major("1200.50").minor == 120050
    assert Money.from_major(Decimal("0.05")).minor == 5
    with pytest.raises(ValueError):
        Money.from_major("1.005")


@given(st.integers(min_value=-10**13, max_value=10**13))
def test_money_render_round_trips(minor):
    assert Money.from_major(Money(minor).render()).minor == minor


def test_payment_result_matches_byte_golden():
    result = PaymentAgentResult(
        transfers=(
            TransferDraft(
                recipient_name="John",
                bank_name="Bank ABC",
                account_number="5512345678",
                amount=100000,
                reference="Funds Transfer",
            ),
        ),
        message="ok",
    )
    blob = canonical_serialize(result)
    assert blob == GOLDEN_PAYMENT
    assert hashlib.sha256(blob).hexdigest() == GOLDEN_PAYMENT_SHA


def test_canonical_bytes_have_sorted_keys_and_no_spaces():
    blob = canonical_serialize(safe_verdict()).decode()
    assert blob == '{"guardrailViolation":null,"isSafe":true,"message":null}'


def test_verdict_round_trip():
    verdict = GuardrailVerdict(
        is_safe=False,
        guardrail_violation=ViolationCategory.VIOLENT_CRIMES,
        message="declined",
    )
    blob = canonical_serialize(verdict)
    assert canonical_parse("guardrail_verdict", blob) == verdict


def test_intent_round_trip():
    result = IntentResult(intent=IntentCategory.PAYMENT, clarification_needed=False)
    assert canonical_parse("intent_result", canonical_serialize(result)) == result


def test_payment_round_trip_preserves_minor_units():
    draft = TransferDraft(
        recipient_name="Jane",
        bank_name="Bank ABC",
        account_number="7712345678",
        amount=50000,
        reference="Lunch",
    )
    result = PaymentAgentResult(transfers=(draft,), message="m")
    parsed = canonical_parse("payment_result", canonical_serialize(result))
    assert parsed.transfers[0].amount == 50000


@given(
    amount=st.one_of(st.none(), st.integers(min_value=0, max_value=10**12)),
    name=st.one_of(st.none(), st.text(min_size=1, max_size=20).filter(str.strip)),
)
def test_draft_round_trip_any_fields(amount, name):
    draft = TransferDraft(recipient_name=name, amount=amount)
    result = PaymentAgentResult(transfers=(draft,), message="m")
    parsed = canonical_parse("payment_result", canonical_serialize(result))
    assert parsed.transfers[0].amount == amount
    assert parsed.transfers[0].recipient_name == name


def test_serialized_money_is_valid_json_number():
    result = PaymentAgentResult(
        transfers=(TransferDraft(recipient_name="A", amount=123456),),
        message="m",
    )
    raw = json.loads(canonical_serialize(result))
    assert raw["transfers"][0]["amount"] == 1234.56


def test_registry_names():
    assert type_name_of(safe_verdict()) == "guardrail_verdict"
    result = IntentResult(intent=IntentCategory.FAQ, clarification_needed=False)
    assert type_name_of(result) == "intent_result"


def test_unregistered_type_rejected():
    with pytest.raises(UnknownType):
        canonical_serialize(object())
    with pytest.raises(UnknownType):
        canonical_parse("no_such_type", b"{}")
