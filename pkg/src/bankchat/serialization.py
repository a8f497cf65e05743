"""Canonical serialization for structured agent outputs.

Wire rules: UTF-8 JSON, keys sorted, no insignificant whitespace, and
currency amounts rendered as bare numbers with exactly two fractional
digits. Currency is held internally as integer minor units (sen); the
``Money`` wrapper marks values that must render as ``123.45``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable

from .errors import UnknownType


@dataclass(frozen=True)
class Money:
    """Currency amount in integer minor units (sen)."""

    minor: int

    def render(self) -> str:
        sign = "-" if self.minor < 0 else ""
        units = abs(self.minor)
        return f"{sign}{units // 100}.{units % 100:02d}"

    @classmethod
    def from_major(cls, value: Decimal | int | float | str) -> "Money":
        """Convert a major-unit amount (e.g. 500.00) to minor units exactly."""
        d = Decimal(str(value))
        minor = (d * 100).to_integral_value()
        if minor != d * 100:
            raise ValueError(f"amount {value!r} has more than two decimals")
        return cls(int(minor))


def _emit(value: Any) -> str:
    if isinstance(value, Money):
        return value.render()
    if value is None or isinstance(value, (bool, int, float, str)):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_emit(v) for v in value) + "]"
    if isinstance(value, dict):
        parts = []
        for key in sorted(value):
            if not isinstance(key, str):
                raise UnknownType(f"non-string key {key!r} in canonical value")
            parts.append(json.dumps(key, ensure_ascii=False) + ":" + _emit(value[key]))
        return "{" + ",".join(parts) + "}"
    raise UnknownType(f"cannot canonically serialize {type(value).__name__}")


# type -> (name, to_jsonable, from_jsonable)
_BY_CLS: dict[type, tuple[str, Callable[[Any], Any], Callable[[Any], Any]]] = {}
_BY_NAME: dict[str, tuple[type, Callable[[Any], Any], Callable[[Any], Any]]] = {}


def register_output_type(
    name: str,
    cls: type,
    to_jsonable: Callable[[Any], Any],
    from_jsonable: Callable[[Any], Any],
) -> None:
    """Register a structured output type for canonical round-tripping."""
    _BY_CLS[cls] = (name, to_jsonable, from_jsonable)
    _BY_NAME[name] = (cls, to_jsonable, from_jsonable)


def type_name_of(value: Any) -> str:
    entry = _BY_CLS.get(type(value))
    if entry is None:
        raise UnknownType(f"{type(value).__name__} is not a registered output type")
    return entry[0]


def canonical_serialize(value: Any) -> bytes:
    """Serialize a registered structured output to canonical UTF-8 JSON."""
    entry = _BY_CLS.get(type(value))
    if entry is None:
        raise UnknownType(f"{type(value).__name__} is not a registered output type")
    _, to_jsonable, _ = entry
    return _emit(to_jsonable(value)).encode("utf-8")


def canonical_parse(name: str, data: bytes | str) -> Any:
    """Parse canonical bytes back into the named registered type."""
    entry = _BY_NAME.get(name)
    if entry is None:
        raise UnknownType(f"no registered output type named {name!r}")
    _, _, from_jsonable = entry
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    raw = json.loads(text, parse_float=Decimal)
    return from_jsonable(raw)


def decode_jsonable(text: str) -> Any:
    """Parse JSON keeping decimal literals exact (floats become Decimal)."""
    return json.loads(text, parse_float=Decimal)
