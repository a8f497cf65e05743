import pytest

from bankchat.banking import FakeClock
from bankchat.bootstrap import build_registry
from bankchat.config import AppConfig
from bankchat.gateway import SessionGateway


@pytest.fixture
def config():
    return AppConfig()


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def registry(config, clock):
    return build_registry(config, clock=clock)


@pytest.fixture
def gateway(registry, config, clock):
    return SessionGateway(
        registry, config.gateway, clock=clock, history_cap=config.history_cap
    )
