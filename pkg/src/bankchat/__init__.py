"""Conversational banking assistant: a guarded four-stage pipeline with a
deterministic fixture backend, a desk-scale bank simulator, a session
gateway, and an evaluation harness."""

from .config import AppConfig
from .bootstrap import build_registry

# Importing these registers their structured output types with the
# canonical serializer.
from . import gateway as _gateway  # noqa: F401
from . import evalharness as _evalharness  # noqa: F401

__all__ = ["AppConfig", "build_registry"]
