"""Pluggable inference boundary.

Renders per-agent prompt templates, selects adapter ids, calls a backend,
and parses/validates strict structured outputs with bounded retry. Two
backends ship: a deterministic fixture engine (ordered rules plus an
exact-match response table) for CI, and a generic chat-completion HTTP
client for a remote model endpoint.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence

import httpx

from .envelope import ChatTurn, ModelCallRecord, Role
from .errors import BackendUnavailable, MissingBinding, SchemaViolation
from .serialization import decode_jsonable

RETRY_LIMIT = 2
REPAIR_SUFFIX = "\nRespond with only the required JSON object, nothing else."

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")
_TOKEN = re.compile(r"\d+|[^\d\s]+")


class AgentName(str, Enum):
    GUARDRAILS = "guardrails"
    INTENT = "intent"
    PAYMENT = "payment"
    FAQ = "faq"


@dataclass(frozen=True)
class AdapterSpec:
    """Per-agent specialization: adapter id, prompt template, output schema."""

    agent_name: AgentName
    adapter_id: str
    prompt_template: str
    output_schema_id: str


def render_prompt(spec: AdapterSpec, bindings: dict[str, str]) -> str:
    """Substitute named ``{placeholder}`` markers; single pass, deterministic.

    Bound values are inserted verbatim and never re-expanded.
    """
    placeholders = set(_PLACEHOLDER.findall(spec.prompt_template))
    missing = placeholders - set(bindings)
    if missing:
        raise MissingBinding(sorted(missing)[0])
    return _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], spec.prompt_template)


def count_tokens(text: str) -> int:
    """Deterministic token approximation: digit runs and non-digit runs.

    Stands in for a real tokenizer in the cost metric; pluggable later.
    """
    return len(_TOKEN.findall(text))


# ---------------------------------------------------------------------------
# Output schema registry


_SCHEMAS: dict[str, Callable[[Any], Any]] = {}


def register_schema(name: str, parse: Callable[[Any], Any]) -> None:
    """Register a structured-output schema parser.

    ``parse`` takes the decoded JSON value and returns the typed output,
    raising :class:`SchemaViolation` when the value does not conform.
    """
    _SCHEMAS[name] = parse


def schema_names() -> set[str]:
    return set(_SCHEMAS)


def parse_structured(schema_id: str, raw_text: str) -> Any:
    if schema_id not in _SCHEMAS:
        raise SchemaViolation(f"schema {schema_id!r} is not registered")
    stripped = _strip_to_json(raw_text)
    try:
        value = decode_jsonable(stripped)
    except (json.JSONDecodeError, ValueError) as exc:
        raise SchemaViolation(f"not valid JSON: {exc}") from exc
    return _SCHEMAS[schema_id](value)


def _strip_to_json(text: str) -> str:
    """Drop code fences and any prose around the outermost JSON object."""
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\s*", "", text)
        text = re.sub(r"\s*```$", "", text)
    start = text.find("{")
    end = text.rfind("}")
    if start != -1 and end > start:
        return text[start : end + 1]
    return text


# ---------------------------------------------------------------------------
# Backends


class Backend(Protocol):
    def generate(
        self, spec: AdapterSpec, prompt: str, history: Sequence[ChatTurn], attempt: int
    ) -> str:
        """Return the raw model text for this call."""
        ...


def normalize_input(text: str) -> str:
    return " ".join(text.casefold().split())


def fixture_key(agent_name: str, text: str) -> str:
    payload = f"{agent_name}\x00{normalize_input(text)}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass
class FixtureRule:
    """One ordered rule: regex over the normalized input -> JSON payload.

    ``build`` receives (match, raw input text, history) and returns the
    jsonable response body the simulated model would emit.
    """

    name: str
    agent: AgentName
    pattern: re.Pattern[str]
    build: Callable[[re.Match[str], str, Sequence[ChatTurn]], Any]
    when: Callable[[str, Sequence[ChatTurn]], bool] | None = None


class FixtureBackend:
    """Deterministic rule/fixture engine standing in for the model.

    Resolution order per call: exact-match fixture table keyed by
    digest(agent, normalized input), then the agent's ordered rule list.
    Table entries may be response sequences consumed per attempt, which
    lets tests script malformed-then-valid generations.
    """

    def __init__(self, rules: Sequence[FixtureRule] = ()):
        self._rules: dict[AgentName, list[FixtureRule]] = {a: [] for a in AgentName}
        for rule in rules:
            self._rules[rule.agent].append(rule)
        self._table: dict[str, list[str]] = {}

    def add_rule(self, rule: FixtureRule) -> None:
        self._rules[rule.agent].append(rule)

    def add_fixture(self, agent: AgentName, text: str, responses: str | list[str]) -> None:
        if isinstance(responses, str):
            responses = [responses]
        self._table[fixture_key(agent.value, text)] = list(responses)

    @staticmethod
    def _input_text(history: Sequence[ChatTurn]) -> str:
        for turn in reversed(history):
            if turn.role is Role.USER:
                return turn.text
        return ""

    def generate(
        self, spec: AdapterSpec, prompt: str, history: Sequence[ChatTurn], attempt: int
    ) -> str:
        raw = self._input_text(history)
        key = fixture_key(spec.agent_name.value, raw)
        scripted = self._table.get(key)
        if scripted:
            return scripted[min(attempt - 1, len(scripted) - 1)]
        normalized = normalize_input(raw)
        for rule in self._rules[spec.agent_name]:
            if rule.when is not None and not rule.when(raw, history):
                continue
            match = rule.pattern.search(normalized)
            if match:
                payload = rule.build(match, raw, history)
                return payload if isinstance(payload, str) else json.dumps(payload)
        return ""


@dataclass
class HttpBackendConfig:
    endpoint: str
    api_key: str = ""
    timeout_s: float = 30.0
    decoding: dict[str, Any] = field(default_factory=dict)


class HttpChatCompletionBackend:
    """Generic chat-completion client; the adapter id rides in the model field."""

    def __init__(self, config: HttpBackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            headers=headers, timeout=config.timeout_s, transport=transport
        )

    def generate(
        self, spec: AdapterSpec, prompt: str, history: Sequence[ChatTurn], attempt: int
    ) -> str:
        messages = [{"role": "system", "content": prompt}]
        messages.extend({"role": t.role.value, "content": t.text} for t in history)
        body = {"model": spec.adapter_id, "messages": messages, **self.config.decoding}
        try:
            response = self._client.post(self.config.endpoint, json=body)
            response.raise_for_status()
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(str(exc)) from exc

    def close(self) -> None:
        self._client.close()


def complete_structured(
    spec: AdapterSpec,
    prompt: str,
    history: Sequence[ChatTurn],
    backend: Backend,
    retry_limit: int = RETRY_LIMIT,
) -> tuple[Any, ModelCallRecord]:
    """Call the backend and parse a schema-valid structured output.

    On malformed text, retries with a one-line repair instruction appended,
    up to ``retry_limit`` extra attempts. Token counts accumulate across
    attempts so the cost metric reflects total usage.
    """
    history_tokens = sum(count_tokens(t.text) for t in history)
    prompt_tokens = 0
    completion_tokens = 0
    started = time.perf_counter()
    last_error: Exception | None = None
    for attempt in range(1, retry_limit + 2):
        sent = prompt if attempt == 1 else prompt + REPAIR_SUFFIX
        raw = backend.generate(spec, sent, history, attempt)
        prompt_tokens += count_tokens(sent) + history_tokens
        completion_tokens += count_tokens(raw)
        try:
            value = parse_structured(spec.output_schema_id, raw)
        except SchemaViolation as exc:
            last_error = exc
            continue
        record = ModelCallRecord(
            adapter_id=spec.adapter_id,
            prompt_token_count=prompt_tokens,
            completion_token_count=completion_tokens,
            latency_ms=(time.perf_counter() - started) * 1000.0,
            attempt=attempt,
        )
        return value, record
    raise SchemaViolation(
        f"{spec.agent_name.value} output invalid after {retry_limit + 1} attempts: {last_error}"
    )


def load_adapter_specs(path: str) -> dict[AgentName, AdapterSpec]:
    """Load the adapter configuration file: a JSON array of AdapterSpec."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    specs: dict[AgentName, AdapterSpec] = {}
    for entry in raw:
        spec = AdapterSpec(
            agent_name=AgentName(entry["agentName"]),
            adapter_id=entry["adapterId"],
            prompt_template=entry["promptTemplate"],
            output_schema_id=entry["outputSchemaId"],
        )
        if spec.agent_name in specs:
            raise ValueError(f"duplicate adapter for agent {spec.agent_name.value}")
        specs[spec.agent_name] = spec
    missing = set(AgentName) - set(specs)
    if missing:
        raise ValueError(f"no adapter configured for: {sorted(a.value for a in missing)}")
    return specs
