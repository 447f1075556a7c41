"""Alert JSON normalization."""

import json

import pytest
from hypothesis import given, strategies as st

from transittalk.alerts import (
    AlertKind,
    AlertStatus,
    InconsistentAlert,
    MalformedJson,
    MissingField,
    parse_alert,
)


def make_raw(**overrides):
    base = {
        "id": "A1",
        "entity_type": "trip",
        "status": "on_hold",
        "trip_id": "LE-101",
        "cause": "mechanical",
        "timestamp": 0,
    }
    base.update(overrides)
    return json.dumps(base)


def test_trip_on_hold():
    event = parse_alert(make_raw())
    assert event.kind is AlertKind.TRIP
    assert event.status is AlertStatus.ON_HOLD
    assert event.trip_id == "LE-101"
    assert event.cause_text == "mechanical"


def test_canceled_aliases():
    assert parse_alert(make_raw(status="canceled")).status is AlertStatus.CANCELED
    assert parse_alert(make_raw(status="CANCELLED")).status is AlertStatus.CANCELED


def test_resumed_aliases():
    assert parse_alert(make_raw(status="resumed")).status is AlertStatus.RESUMED
    assert parse_alert(make_raw(status="Back_To_Move")).status is AlertStatus.RESUMED
    assert parse_alert(make_raw(status="DELAYED")).status is AlertStatus.ON_HOLD


def test_trip_alert_without_trip_id():
    raw = json.dumps({"id": "A3", "entity_type": "trip", "status": "on_hold", "timestamp": 0})
    with pytest.raises(InconsistentAlert):
        parse_alert(raw)


def test_unknown_trip_status_never_defaults():
    with pytest.raises(InconsistentAlert):
        parse_alert(make_raw(status="exploded"))


def test_station_alert_is_informational():
    raw = json.dumps(
        {"id": "A4", "entity_type": "station", "status": "elevator_outage",
         "stop_id": "DA", "timestamp": 5}
    )
    event = parse_alert(raw)
    assert event.kind is AlertKind.STATION
    assert event.status is AlertStatus.INFORMATIONAL
    assert event.stop_id == "DA"


def test_station_alert_without_stop_id():
    raw = json.dumps({"id": "A4", "entity_type": "station", "status": "x", "timestamp": 5})
    with pytest.raises(InconsistentAlert):
        parse_alert(raw)


def test_missing_field_names_the_field():
    raw = json.dumps({"id": "A1", "entity_type": "trip", "trip_id": "LE-101", "timestamp": 0})
    with pytest.raises(MissingField) as exc:
        parse_alert(raw)
    assert exc.value.name == "status"


def test_malformed_json():
    with pytest.raises(MalformedJson):
        parse_alert("{not json")
    with pytest.raises(MalformedJson):
        parse_alert("[1, 2]")


def test_unknown_entity_type():
    with pytest.raises(InconsistentAlert):
        parse_alert(make_raw(entity_type="spaceship"))


@given(
    status=st.sampled_from(
        ["on_hold", "delayed", "resumed", "back_to_move", "canceled", "cancelled"]
    ),
    alert_id=st.text(min_size=1, max_size=8),
    trip_id=st.text(min_size=1, max_size=8).filter(str.strip),
    timestamp=st.integers(min_value=0, max_value=2**31),
)
def test_total_over_wellformed_trip_alerts(status, alert_id, trip_id, timestamp):
    raw = json.dumps(
        {"id": alert_id, "entity_type": "trip", "status": status,
         "trip_id": trip_id, "timestamp": timestamp}
    )
    event = parse_alert(raw)
    assert event.status in (AlertStatus.ON_HOLD, AlertStatus.RESUMED, AlertStatus.CANCELED)
