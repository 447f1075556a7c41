"""Service-alert ingestion: normalize raw alert JSON into typed events.

The wire schema is a small JSON object per alert: {id, entity_type,
status, trip_id?, stop_id?, cause?, timestamp}. It stands in for a full
GTFS-realtime alert feed, which commonly arrives as protobuf; a protobuf
adapter is out of scope.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path


class AlertError(Exception):
    """Base class for alert parsing failures."""


class MalformedJson(AlertError):
    pass


class MissingField(AlertError):
    def __init__(self, name: str):
        super().__init__(f"alert missing field {name!r}")
        self.name = name


class InconsistentAlert(AlertError):
    pass


class AlertKind(enum.Enum):
    TRIP = "trip"
    STATION = "station"


class AlertStatus(enum.Enum):
    ON_HOLD = "on_hold"
    RESUMED = "resumed"
    CANCELED = "canceled"
    INFORMATIONAL = "informational"

    @property
    def human_label(self) -> str:
        return {
            "on_hold": "delayed (on hold)",
            "resumed": "back to move",
            "canceled": "canceled",
            "informational": "service information",
        }[self.value]


# Trip alerts must carry one of these statuses; station alerts are always
# informational regardless of the raw status string. Unknown trip statuses
# are an error, never a silent default.
_TRIP_STATUS_ALIASES = {
    "on_hold": AlertStatus.ON_HOLD,
    "delayed": AlertStatus.ON_HOLD,
    "resumed": AlertStatus.RESUMED,
    "back_to_move": AlertStatus.RESUMED,
    "canceled": AlertStatus.CANCELED,
    "cancelled": AlertStatus.CANCELED,
}

_REQUIRED_FIELDS = ("id", "entity_type", "status", "timestamp")


@dataclass(frozen=True)
class AlertEvent:
    alert_id: str
    kind: AlertKind
    status: AlertStatus
    trip_id: str | None
    stop_id: str | None
    cause_text: str
    timestamp: int


def parse_alert(raw: str) -> AlertEvent:
    """Parse one raw alert JSON object into an AlertEvent.

    Total over well-formed JSON: every input yields an AlertEvent or one
    typed error (MalformedJson, MissingField, InconsistentAlert).
    """
    try:
        obj = json.loads(raw)
    except ValueError as exc:
        raise MalformedJson(f"alert is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedJson("alert must be a JSON object")

    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise MissingField(name)

    entity = str(obj["entity_type"]).strip().lower()
    if entity not in ("trip", "station"):
        raise InconsistentAlert(f"unknown entity_type {obj['entity_type']!r}")
    kind = AlertKind.TRIP if entity == "trip" else AlertKind.STATION

    status_raw = str(obj["status"]).strip().lower()
    trip_id = _optional_str(obj, "trip_id")
    stop_id = _optional_str(obj, "stop_id")

    if kind is AlertKind.TRIP:
        status = _TRIP_STATUS_ALIASES.get(status_raw)
        if status is None:
            raise InconsistentAlert(f"unknown trip alert status {obj['status']!r}")
        if not trip_id:
            raise InconsistentAlert("trip alert without trip_id")
    else:
        status = AlertStatus.INFORMATIONAL
        if not stop_id:
            raise InconsistentAlert("station alert without stop_id")

    try:
        timestamp = int(obj["timestamp"])
    except (TypeError, ValueError):
        raise InconsistentAlert("timestamp must be an integer") from None

    return AlertEvent(
        alert_id=str(obj["id"]),
        kind=kind,
        status=status,
        trip_id=trip_id,
        stop_id=stop_id,
        cause_text=str(obj.get("cause", "") or ""),
        timestamp=timestamp,
    )


def _optional_str(obj: dict, key: str) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def load_alerts(path: str | Path) -> list[AlertEvent]:
    """Read a JSONL alert file, one alert object per non-empty line."""
    events = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            events.append(parse_alert(line))
    return events


def describe_alert(alert: AlertEvent) -> str:
    """Render an alert the way it is fed to prompts and fact blocks."""
    if alert.kind is AlertKind.TRIP:
        subject = f"trip {alert.trip_id}"
    else:
        subject = f"station alert at stop {alert.stop_id}"
    cause = f": {alert.cause_text}" if alert.cause_text else ""
    return f"[{alert.alert_id}] {subject}, status {alert.status.human_label}{cause}"
