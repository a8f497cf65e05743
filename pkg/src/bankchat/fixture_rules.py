"""Default rule set for the fixture backend.

One ordered rule list per agent, tuned to the desk corpus: keyword
classifiers for guardrails and intent, the deterministic field extractor
for transfers, and an extractive responder for FAQ generation. Together
they make the whole pipeline runnable and repeatable with no model.
"""

from __future__ import annotations

import re
from typing import Sequence

from .backend import AgentName, FixtureBackend, FixtureRule
from .banking import BankDirectory
from .envelope import ChatTurn
from .faq import CONTEXT_CLOSE, CONTEXT_HEADER, CONTEXT_OPEN, FALLBACK_MESSAGE
from .guardrails import REFUSAL_MESSAGES, ViolationCategory
from .intent import CLARIFICATION_FALLBACK, IntentCategory
from .payment import (
    PaymentAgentResult,
    completion_state,
    compose_message,
    extract_transfers,
)
from .serialization import canonical_serialize

# -- guardrails -------------------------------------------------------------

_SAFE_VERDICT = {"isSafe": True, "guardrailViolation": None, "message": None}

# Ordered: the first matching category wins.
_VIOLATION_PATTERNS: tuple[tuple[str, ViolationCategory], ...] = (
    (
        r"instructions given to you|ignore (?:all |the |previous |prior )?"
        r"(?:instructions|rules)|system prompt|reveal your (?:prompt|instructions)"
        r"|pretend you are not|jailbreak|run this (?:code|script)|execute this code",
        ViolationCategory.CODE_INTERPRETER_ABUSE,
    ),
    (
        r"\b(?:bomb|kill|murder|weapons?|explosives?)\b"
        r"|hurt (?:someone|him|her|them)|attack (?:someone|him|her)",
        ViolationCategory.VIOLENT_CRIMES,
    ),
    (
        r"launder|counterfeit|smuggl|steal (?:money|from)|hack (?:into|the)"
        r"|evade tax|forge|insider trading|commit fraud|scam (?:someone|people)",
        ViolationCategory.NON_VIOLENT_CRIMES,
    ),
    (
        r"\bporn\b|\bnudes?\b|sexual favors|escort service|explicit (?:photos|images)",
        ViolationCategory.SEX_RELATED_CRIMES,
    ),
    (
        r"fake news|spread (?:a )?(?:rumor|rumour|lie)|defam|smear campaign"
        r"|misinformation|blackmail|bribe",
        ViolationCategory.DEFAMATION_MISINFORMATION_UNETHICAL,
    ),
    (
        r"someone else'?s account|another person'?s|home address of"
        r"|personal (?:data|details) of|spy on|without (?:his|her|their) consent",
        ViolationCategory.PRIVACY,
    ),
    (
        r"politic|election|vote for|prime minister|government policy|which party",
        ViolationCategory.CONTROVERSIAL_TOPICS_POLITICS,
    ),
    (
        r"hate speech|racist|\bslurs?\b|supremac",
        ViolationCategory.HATE,
    ),
)


def _refusal(category: ViolationCategory):
    payload = {
        "isSafe": False,
        "guardrailViolation": category.value,
        "message": REFUSAL_MESSAGES[category],
    }

    def build(match: re.Match[str], raw: str, history: Sequence[ChatTurn]) -> dict:
        return payload

    return build


def guardrail_rules() -> list[FixtureRule]:
    rules = [
        FixtureRule(
            name=f"guardrail-{category.name.lower()}",
            agent=AgentName.GUARDRAILS,
            pattern=re.compile(pattern),
            build=_refusal(category),
        )
        for pattern, category in _VIOLATION_PATTERNS
    ]
    rules.append(
        FixtureRule(
            name="guardrail-default-safe",
            agent=AgentName.GUARDRAILS,
            pattern=re.compile(r""),
            build=lambda m, raw, h: _SAFE_VERDICT,
        )
    )
    return rules


# -- intent -----------------------------------------------------------------

def _intent(category: IntentCategory):
    payload = {"intent": category.value, "clarificationNeeded": False, "message": None}

    def build(match: re.Match[str], raw: str, history: Sequence[ChatTurn]) -> dict:
        return payload

    return build


def _payment_context(raw: str, history: Sequence[ChatTurn]) -> bool:
    """True when earlier turns establish that a transfer is underway."""
    keywords = ("transfer", "tsfr", "send", "pay", "how much")
    return any(
        any(k in turn.text.casefold() for k in keywords) for turn in history[:-1]
    )


_FAQ_NOUNS = (
    r"interest|rates?|fees?|charges?|limits?|work|support|transferees?"
    r"|duitnow|overseas|deposits?|cards?|eligib|requirement|activate|register"
    r"|set up|safe|secure|codes?|verification|statements?|atm|withdraw|pin"
    r"|loans?|cheque|beneficiar|documents?|exchange"
)
_FAQ_TOPIC_RE = re.compile(_FAQ_NOUNS)


def _faq_context(raw: str, history: Sequence[ChatTurn]) -> bool:
    """True when an earlier turn already named a product topic."""
    return any(_FAQ_TOPIC_RE.search(turn.text.casefold()) for turn in history[:-1])


_INTENT_RULES: tuple[tuple[str, str, IntentCategory, object], ...] = (
    # (name, pattern over normalized text, category, context gate or None)
    (
        "intent-history",
        r"transaction history|my (?:recent )?transactions|recent transfers"
        r"|past (?:transfers|transactions)|my statement|transfers i(?:'ve)? (?:made|sent)",
        IntentCategory.HISTORY_INQUIRY,
        None,
    ),
    (
        "intent-account",
        r"\bbalance\b|my account (?:number|details)|how much (?:money )?"
        r"(?:do i have|is (?:left )?in my)",
        IntentCategory.ACCOUNT_INQUIRY,
        None,
    ),
    (
        "intent-insight",
        r"spending|insights?|budget|where (?:did|does) my money|how much did i spend",
        IntentCategory.INSIGHT,
        None,
    ),
    (
        "intent-faq",
        r"(?:what|how|why|when|where|which|can i|could i|do you|does|is there|are there)"
        r".*(?:" + _FAQ_NOUNS + r")",
        IntentCategory.FAQ,
        None,
    ),
    (
        "intent-faq-followup",
        r"^how (?:many|much)\b|^what about\b|^and\b",
        IntentCategory.FAQ,
        _faq_context,
    ),
    (
        "intent-payment",
        r"\b(?:transfer|tsfr|trnsfr|trasnfer|send|pay|payment|remit)\b|duitnow",
        IntentCategory.PAYMENT,
        None,
    ),
    (
        "intent-payment-amount-followup",
        r"^rm ?\d+(?:\.\d+)?$|^\d+(?:\.\d+)?$",
        IntentCategory.PAYMENT,
        _payment_context,
    ),
    (
        "intent-payment-details-followup",
        r"account no|^bank \w+|^\d{6,20}$",
        IntentCategory.PAYMENT,
        _payment_context,
    ),
    (
        "intent-payment-selection-followup",
        r"^(?:the )?(?:first|second|third|1st|2nd|3rd|[123])(?: one)?\b",
        IntentCategory.PAYMENT,
        _payment_context,
    ),
    (
        "intent-chat",
        r"^(?:hi|hello|hey|yo|good (?:morning|afternoon|evening))\b|thank"
        r"|\bbye\b|how are you",
        IntentCategory.CHAT,
        None,
    ),
)


def intent_rules() -> list[FixtureRule]:
    rules = [
        FixtureRule(
            name=name,
            agent=AgentName.INTENT,
            pattern=re.compile(pattern),
            build=_intent(category),
            when=gate,
        )
        for name, pattern, category, gate in _INTENT_RULES
    ]
    rules.append(
        FixtureRule(
            name="intent-default-clarify",
            agent=AgentName.INTENT,
            pattern=re.compile(r""),
            build=lambda m, raw, h: {
                "intent": IntentCategory.CHAT.value,
                "clarificationNeeded": True,
                "message": CLARIFICATION_FALLBACK,
            },
        )
    )
    return rules


# -- payment ----------------------------------------------------------------

def payment_rules(directory: BankDirectory) -> list[FixtureRule]:
    def build(match: re.Match[str], raw: str, history: Sequence[ChatTurn]) -> str:
        drafts = extract_transfers(raw, history[:-1], directory)
        state = completion_state(drafts, directory)
        result = PaymentAgentResult(
            transfers=tuple(drafts), message=compose_message(state, drafts)
        )
        return canonical_serialize(result).decode("utf-8")

    return [
        FixtureRule(
            name="payment-extract",
            agent=AgentName.PAYMENT,
            pattern=re.compile(r""),
            build=build,
        )
    ]


# -- faq --------------------------------------------------------------------

_CONTEXT_LINE_RE = re.compile(r"^\[([^\]]+)\] ([^:]*): (.*)$")


def parse_context_block(raw: str) -> tuple[str, list[tuple[str, str, str]]]:
    """Split an augmented FAQ input back into (query, [(id, title, body)])."""
    if CONTEXT_HEADER not in raw:
        return raw.strip(), []
    query, _, rest = raw.partition(CONTEXT_HEADER)
    docs = []
    in_block = False
    for line in rest.splitlines():
        line = line.strip()
        if line == CONTEXT_OPEN:
            in_block = True
            continue
        if line == CONTEXT_CLOSE:
            break
        if in_block:
            match = _CONTEXT_LINE_RE.match(line)
            if match:
                docs.append((match.group(1), match.group(2), match.group(3)))
    return query.strip(), docs


def faq_rules() -> list[FixtureRule]:
    def build(match: re.Match[str], raw: str, history: Sequence[ChatTurn]) -> dict:
        query, docs = parse_context_block(raw)
        if not docs:
            return {"message": FALLBACK_MESSAGE}
        # Docs arrive best-first; answer extractively from the top one so
        # every sentence traces back to supplied knowledge.
        return {"message": docs[0][2]}

    return [
        FixtureRule(
            name="faq-extractive",
            agent=AgentName.FAQ,
            pattern=re.compile(r""),
            build=build,
        )
    ]


def default_rules(directory: BankDirectory) -> list[FixtureRule]:
    return guardrail_rules() + intent_rules() + payment_rules(directory) + faq_rules()


def default_fixture_backend(directory: BankDirectory) -> FixtureBackend:
    return FixtureBackend(default_rules(directory))
