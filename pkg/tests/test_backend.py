"""Model backend seam: prompt rendering, token accounting, the fixture
engine, structured-output retry, and the HTTP client contract."""

import json
import re

import httpx
import pytest
from hypothesis import given, strategies as st

from bankchat.backend import (
    AdapterSpec,
    AgentName,
    FixtureBackend,
    FixtureRule,
    HttpBackendConfig,
    HttpChatCompletionBackend,
    complete_structured,
    count_tokens,
    fixture_key,
    normalize_input,
    render_prompt,
)
from bankchat.envelope import user_turn
from bankchat.errors import BackendUnavailable, MissingBinding, SchemaViolation

import bankchat.intent  # noqa: F401  (registers the intent_result schema)


INTENT_SPEC = AdapterSpec(
    agent_name=AgentName.INTENT,
    adapter_id="adapter-intent-01",
    prompt_template="Route the message.",
    output_schema_id="intent_result",
)

VALID_INTENT = '{"intent": "FAQ", "clarificationNeeded": false}'


# Frozen oracle: digit runs and non-digit runs count separately,
# so "RM10" splits into "RM" and "10".
@pytest.mark.parametrize(
    "text,count",
    [
        ("transfer RM10 to Mike", 5),
        ("", 0),
        ("   ", 0),
        ("hello", 1),
        ("RM1,250.50", 6),
        ("acc 5512345678", 2),
    ],
)
def test_token_count_oracle(text, count):
    assert count_tokens(text) == count


def test_normalize_casefolds_and_collapses():
    assert normalize_input("  Hello   WORLD \n") == "hello world"
    assert normalize_input("account  number") == "account number"


def test_fixture_key_oracle():
    # sha256 over agent name, NUL, normalized text; frozen independently.
    assert fixture_key("intent", "Hello There") == (
        "c961f884d5bce08d7f9d939faff0410c3af9c7199619a97d8230d5069ee41efa"
    )


@given(st.text())
def test_fixture_key_is_case_and_spacing_insensitive(text):
    assert fixture_key("faq", text) == fixture_key("faq", " ".join(text.casefold().split()))


def test_render_prompt_substitutes_bindings():
    spec = AdapterSpec(
        agent_name=AgentName.PAYMENT,
        adapter_id="a",
        prompt_template="Banks: {bank_names}. Go.",
        output_schema_id="payment_result",
    )
    assert render_prompt(spec, {"bank_names": "X, Y"}) == "Banks: X, Y. Go."
    with pytest.raises(MissingBinding):
        render_prompt(spec, {})


def test_render_prompt_single_pass():
    spec = AdapterSpec(
        agent_name=AgentName.PAYMENT,
        adapter_id="a",
        prompt_template="{x}",
        output_schema_id="payment_result",
    )
    # A bound value containing a marker must not be expanded again.
    assert render_prompt(spec, {"x": "{y}"}) == "{y}"


def test_exact_fixture_beats_rules():
    backend = FixtureBackend(
        rules=[
            FixtureRule(
                agent=AgentName.INTENT,
                name="catch",
                pattern=re.compile(r""),
                build=lambda m, raw, h: '{"intent": "CHAT", "clarificationNeeded": false}',
            )
        ]
    )
    backend.add_fixture(AgentName.INTENT, "special case", VALID_INTENT)
    out = backend.generate(INTENT_SPEC, "p", [user_turn("SPECIAL   case")], 1)
    assert json.loads(out)["intent"] == "FAQ"
    out = backend.generate(INTENT_SPEC, "p", [user_turn("other")], 1)
    assert json.loads(out)["intent"] == "CHAT"


def test_rules_fire_in_declaration_order():
    backend = FixtureBackend(
        rules=[
            FixtureRule(
                agent=AgentName.INTENT,
                name="first",
                pattern=re.compile(r"pay"),
                build=lambda m, raw, h: '{"winner": "first"}',
            ),
            FixtureRule(
                agent=AgentName.INTENT,
                name="second",
                pattern=re.compile(r"pay"),
                build=lambda m, raw, h: '{"winner": "second"}',
            ),
        ]
    )
    out = backend.generate(INTENT_SPEC, "p", [user_turn("pay now")], 1)
    assert json.loads(out)["winner"] == "first"


def test_input_is_last_user_turn():
    backend = FixtureBackend()
    backend.add_fixture(AgentName.INTENT, "newest", VALID_INTENT)
    history = [user_turn("oldest"), user_turn("newest")]
    assert backend.generate(INTENT_SPEC, "p", history, 1) == VALID_INTENT


def test_fixture_determinism():
    backend = FixtureBackend()
    backend.add_fixture(AgentName.INTENT, "q", VALID_INTENT)
    outs = {backend.generate(INTENT_SPEC, "p", [user_turn("q")], 1) for _ in range(50)}
    assert len(outs) == 1


def test_structured_retry_recovers_then_gives_up():
    backend = FixtureBackend()
    backend.add_fixture(
        AgentName.INTENT, "flaky", ["not json", "{\"broken\": true}", VALID_INTENT]
    )
    result, record = complete_structured(
        INTENT_SPEC, "prompt", [user_turn("flaky")], backend
    )
    assert result.intent.value == "FAQ"
    assert record.attempt == 3

    backend.add_fixture(AgentName.INTENT, "hopeless", ["nope", "nope", "nope", "nope"])
    with pytest.raises(SchemaViolation):
        complete_structured(INTENT_SPEC, "prompt", [user_turn("hopeless")], backend)


def test_retry_token_counts_accumulate():
    backend = FixtureBackend()
    backend.add_fixture(AgentName.INTENT, "w", VALID_INTENT)
    _, one_shot = complete_structured(INTENT_SPEC, "prompt", [user_turn("w")], backend)

    backend.add_fixture(AgentName.INTENT, "v", ["bad", VALID_INTENT])
    _, retried = complete_structured(INTENT_SPEC, "prompt", [user_turn("v")], backend)
    assert retried.attempt == 2
    assert retried.prompt_token_count > one_shot.prompt_token_count
    assert retried.completion_token_count > one_shot.completion_token_count


def test_structured_parse_accepts_fenced_json():
    backend = FixtureBackend()
    backend.add_fixture(
        AgentName.INTENT, "fenced", "```json\n" + VALID_INTENT + "\n```"
    )
    result, record = complete_structured(
        INTENT_SPEC, "prompt", [user_turn("fenced")], backend
    )
    assert result.intent.value == "FAQ"
    assert record.attempt == 1


def test_http_backend_posts_chat_completion_shape():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(
            200, json={"choices": [{"message": {"content": VALID_INTENT}}]}
        )

    backend = HttpChatCompletionBackend(
        HttpBackendConfig(
            endpoint="https://model.test/v1/chat/completions",
            api_key="k",
            decoding={"temperature": 0},
        ),
        transport=httpx.MockTransport(handler),
    )
    out = backend.generate(INTENT_SPEC, "sys prompt", [user_turn("hi")], 1)
    assert out == VALID_INTENT
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["model"] == "adapter-intent-01"
    assert seen["body"]["temperature"] == 0
    assert seen["body"]["messages"][0] == {"role": "system", "content": "sys prompt"}
    assert seen["body"]["messages"][1] == {"role": "user", "content": "hi"}
    backend.close()


def test_http_backend_wraps_transport_errors():
    def handler(request):
        return httpx.Response(503)

    backend = HttpChatCompletionBackend(
        HttpBackendConfig(endpoint="https://model.test/x"),
        transport=httpx.MockTransport(handler),
    )
    with pytest.raises(BackendUnavailable):
        backend.generate(INTENT_SPEC, "p", [user_turn("hi")], 1)
    backend.close()
