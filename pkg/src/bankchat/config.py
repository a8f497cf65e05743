"""Settings for the assistant, its bank fixtures, and the eval harness.

Everything is a plain dataclass with desk-scale defaults pointing at the
packaged data files; ``AppConfig.from_json`` overlays a user config file
on top of those defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"


def data_path(name: str) -> str:
    return str(DATA_DIR / name)


@dataclass(frozen=True)
class BankSettings:
    accounts_path: str = data_path("accounts.json")
    banks_path: str = data_path("banks.json")
    aml_path: str = data_path("aml_list.json")
    per_transaction_limit: int = 5_000_000  # minor units
    daily_limit: int = 10_000_000
    twofa_threshold: int = 25_000
    tz_offset_hours: int = 8


@dataclass(frozen=True)
class FaqSettings:
    knowledge_path: str = data_path("knowledge.jsonl")
    embedding_dim: int = 256
    retrieve_k: int = 8
    generation_docs: int = 3
    rerank_alpha: float = 0.7
    confidence_threshold: float = 0.15


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "fixture"  # fixture | http
    endpoint: str = ""
    api_key: str = ""
    timeout_s: float = 30.0
    decoding: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GatewaySettings:
    session_expiry_s: float = 900.0
    admin_token: str = "desk-admin"
    # Desk builds surface the simulated one-time code in responses so the
    # approval flow is drivable end to end without an SMS channel.
    expose_2fa_code: bool = True
    audit_path: str = ""  # empty: in-memory only


@dataclass(frozen=True)
class EvalSettings:
    target_latency_ms: float = 1000.0
    cost_budget: float = 1.0
    # adapterId -> price per 1,000 tokens
    prompt_prices: dict = field(default_factory=dict)
    completion_prices: dict = field(default_factory=dict)
    transactional_error_threshold: float = 0.005
    faq_error_threshold: float = 0.02


@dataclass(frozen=True)
class AppConfig:
    adapters_path: str = data_path("adapters.json")
    blocklist_path: str = data_path("blocklist.json")
    ocr_path: str = data_path("ocr_fixtures.json")
    default_account_id: str = "acc-001"
    history_cap: int = 10
    bank: BankSettings = field(default_factory=BankSettings)
    faq: FaqSettings = field(default_factory=FaqSettings)
    backend: BackendSettings = field(default_factory=BackendSettings)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @classmethod
    def from_json(cls, path: str) -> "AppConfig":
        """Overlay a JSON config file on the defaults. Nested sections use
        the field names above; unknown keys are rejected."""
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        config = cls()
        nested = {
            "bank": BankSettings,
            "faq": FaqSettings,
            "backend": BackendSettings,
            "gateway": GatewaySettings,
            "eval": EvalSettings,
        }
        updates: dict = {}
        top_level = {f.name for f in fields(cls)}
        for key, value in raw.items():
            if key not in top_level:
                raise ValueError(f"unknown config key {key!r}")
            if key in nested:
                section_cls = nested[key]
                known = {f.name for f in fields(section_cls)}
                unknown = set(value) - known
                if unknown:
                    raise ValueError(f"unknown {key} config keys {sorted(unknown)}")
                updates[key] = replace(getattr(config, key), **value)
            else:
                updates[key] = value
        return replace(config, **updates)
