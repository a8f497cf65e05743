"""Builds a fully wired agent registry from configuration."""

from __future__ import annotations

import json

from .backend import (
    AgentName,
    Backend,
    HttpBackendConfig,
    HttpChatCompletionBackend,
    load_adapter_specs,
)
from .banking import (
    AmlList,
    Bank,
    BankDirectory,
    Clock,
    TransferLimits,
    TwoFaPolicy,
    load_accounts,
)
from .config import AppConfig
from .faq import FaqAgent, VectorStore
from .fixture_rules import default_fixture_backend
from .guardrails import GuardrailsAgent, ImageModerationStub, parse_blocklist
from .intent import IntentRouter
from .payment import OcrFixtureStore, PaymentAgent, draft_validator, transfer_kind
from .pipeline import AgentRegistry


def build_backend(config: AppConfig, directory: BankDirectory) -> Backend:
    if config.backend.kind == "fixture":
        return default_fixture_backend(directory)
    if config.backend.kind == "http":
        return HttpChatCompletionBackend(
            HttpBackendConfig(
                endpoint=config.backend.endpoint,
                api_key=config.backend.api_key,
                timeout_s=config.backend.timeout_s,
                decoding=dict(config.backend.decoding),
            )
        )
    raise ValueError(f"unknown backend kind {config.backend.kind!r}")


def build_registry(
    config: AppConfig | None = None,
    backend: Backend | None = None,
    clock: Clock | None = None,
) -> AgentRegistry:
    config = config or AppConfig()
    directory = BankDirectory.load(config.bank.banks_path)
    bank = Bank(
        accounts=load_accounts(config.bank.accounts_path),
        directory=directory,
        aml=AmlList.load(config.bank.aml_path),
        limits=TransferLimits(
            per_transaction=config.bank.per_transaction_limit,
            daily=config.bank.daily_limit,
        ),
        twofa_policy=TwoFaPolicy(threshold=config.bank.twofa_threshold),
        clock=clock,
        tz_offset_hours=config.bank.tz_offset_hours,
        draft_validator=draft_validator(directory),
        kind_classifier=transfer_kind,
    )
    backend = backend or build_backend(config, directory)
    specs = load_adapter_specs(config.adapters_path)
    with open(config.blocklist_path, "r", encoding="utf-8") as fh:
        policy = parse_blocklist(json.load(fh), version=1)
    guardrails = GuardrailsAgent(
        spec=specs[AgentName.GUARDRAILS],
        backend=backend,
        policy=policy,
        moderation=ImageModerationStub(),
    )
    intent = IntentRouter(spec=specs[AgentName.INTENT], backend=backend)
    payment = PaymentAgent(
        spec=specs[AgentName.PAYMENT],
        backend=backend,
        bank=bank,
        ocr=OcrFixtureStore.load(config.ocr_path),
    )
    faq = FaqAgent(
        spec=specs[AgentName.FAQ],
        backend=backend,
        store=VectorStore.ingest_jsonl(config.faq.knowledge_path, config.faq.embedding_dim),
        alpha=config.faq.rerank_alpha,
        k=config.faq.retrieve_k,
        generation_docs=config.faq.generation_docs,
        confidence_threshold=config.faq.confidence_threshold,
    )
    return AgentRegistry(
        guardrails=guardrails,
        intent=intent,
        payment=payment,
        faq=faq,
        bank=bank,
        default_account_id=config.default_account_id,
    )
