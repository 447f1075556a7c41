import pathlib

import pytest

from transittalk.alerts import load_alerts
from transittalk.gateway import ScriptedGateway, load_transcript
from transittalk.gtfs import load_feed

TESTDATA = pathlib.Path(__file__).resolve().parent.parent / "testdata"
SCRIPTS = TESTDATA / "scripts"


@pytest.fixture(scope="session")
def feed():
    return load_feed(TESTDATA / "mini_feed")


@pytest.fixture(scope="session")
def fixture_alerts():
    return load_alerts(TESTDATA / "alerts.jsonl")


@pytest.fixture
def alerts_by_id(fixture_alerts):
    return {a.alert_id: a for a in fixture_alerts}


def script_gateway(name: str) -> ScriptedGateway:
    return ScriptedGateway(load_transcript(SCRIPTS / f"{name}.txt"))


@pytest.fixture
def fixed_clock():
    return lambda: 1700000000.0
