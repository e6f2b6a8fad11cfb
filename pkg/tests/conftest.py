from __future__ import annotations

import socket
from pathlib import Path
from types import SimpleNamespace

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """The suite is hermetic: any attempt to open a connection is a failure."""

    def refuse(self, *args, **kwargs):
        raise AssertionError("test suite attempted a network connection")

    original = socket.socket.connect
    socket.socket.connect = refuse
    try:
        yield
    finally:
        socket.socket.connect = original


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def pass_function_source() -> str:
    return (FIXTURES / "device_global_pass_function.cpp").read_text()


@pytest.fixture(scope="session")
def characteristics_text() -> str:
    return (FIXTURES / "device_global_characteristics.txt").read_text()


@pytest.fixture(scope="session")
def generated_testcase_source() -> str:
    return (FIXTURES / "device_global_testcase.cpp").read_text()


@pytest.fixture(scope="session")
def tiny_campaign(tmp_path_factory):
    """One completed tiny-scenario campaign shared by read-only tests."""
    from ragfuzz.campaign import load_config_file, run_campaign
    from ragfuzz.scenarios import load_scenario, materialize_scenario

    tmp = tmp_path_factory.mktemp("tiny_shared")
    scenario = load_scenario("tiny")
    config_path = materialize_scenario(scenario, tmp / "work")
    config = load_config_file(config_path)
    campaign_dir = tmp / "campaign"
    report = run_campaign(config, campaign_dir)
    return SimpleNamespace(
        scenario=scenario,
        config_path=config_path,
        config=config,
        campaign_dir=campaign_dir,
        report=report,
    )
