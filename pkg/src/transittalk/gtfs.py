"""GTFS static feed loading, indexing, and trip queries.

The loader reads the five-file core of a GTFS feed (stops, routes, trips,
stop_times, calendar) into an immutable, fully indexed store. Query
helpers answer the two lookups the assistant tools need: details for one
trip, and the next departures between two stops. Only direct journeys are
considered; transfers are out of scope.
"""

from __future__ import annotations

import csv
import enum
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .timetext import format_clock, parse_gtfs_time

logger = logging.getLogger(__name__)

REQUIRED_FILES = ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt", "calendar.txt")

_WEEKDAY_COLUMNS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


class GtfsError(Exception):
    """Base class for feed loading and query errors."""


class MissingFile(GtfsError):
    def __init__(self, filename: str):
        super().__init__(f"required feed file missing: {filename}")
        self.filename = filename


class MalformedRow(GtfsError):
    def __init__(self, filename: str, line: int, reason: str):
        super().__init__(f"{filename}:{line}: {reason}")
        self.filename = filename
        self.line = line
        self.reason = reason


class DanglingReference(GtfsError):
    def __init__(self, entity: str, ref_id: str):
        super().__init__(f"reference to unknown {entity} {ref_id!r}")
        self.entity = entity
        self.ref_id = ref_id


class EmptyTrip(GtfsError):
    def __init__(self, trip_id: str):
        super().__init__(f"trip {trip_id!r} has fewer than 2 stop-times")
        self.trip_id = trip_id


class UnknownTrip(GtfsError):
    def __init__(self, trip_id: str):
        super().__init__(f"no trip with id {trip_id!r}")
        self.trip_id = trip_id


class UnknownStop(GtfsError):
    def __init__(self, stop: str):
        super().__init__(f"no stop matching {stop!r}")
        self.stop = stop


class SameStop(GtfsError):
    def __init__(self, stop_id: str):
        super().__init__(f"origin and destination are the same stop: {stop_id!r}")
        self.stop_id = stop_id


class AmbiguousStop(GtfsError):
    def __init__(self, name: str, candidates: list[str]):
        super().__init__(f"stop name {name!r} is ambiguous: {', '.join(candidates)}")
        self.name = name
        self.candidates = candidates


class Accessibility(enum.Enum):
    """Tri-state wheelchair flag, following the GTFS 0/1/2 convention."""

    UNKNOWN = 0
    ACCESSIBLE = 1
    NOT_ACCESSIBLE = 2

    @classmethod
    def from_gtfs(cls, raw: str) -> "Accessibility":
        value = raw.strip()
        if value == "":
            return cls.UNKNOWN
        return cls(int(value))

    @property
    def label(self) -> str:
        return {0: "unknown", 1: "yes", 2: "no"}[self.value]


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str
    wheelchair_boarding: Accessibility = Accessibility.UNKNOWN


@dataclass(frozen=True)
class Route:
    route_id: str
    long_name: str
    short_name: str | None = None


@dataclass(frozen=True)
class Trip:
    trip_id: str
    route_id: str
    service_id: str
    headsign: str | None = None
    wheelchair_accessible: Accessibility = Accessibility.UNKNOWN


@dataclass(frozen=True)
class StopTime:
    trip_id: str
    stop_id: str
    arrival: int
    departure: int
    sequence: int


@dataclass(frozen=True)
class ServicePattern:
    service_id: str
    weekdays: frozenset[int]  # 0 = Monday
    start_date: str
    end_date: str


@dataclass(frozen=True)
class StopCall:
    """One scheduled stop within a trip listing."""

    stop_id: str
    stop_name: str
    arrival: int
    departure: int


@dataclass(frozen=True)
class TripDetails:
    """Rider-facing view of one trip (or a segment of it)."""

    trip_id: str
    route_id: str
    route_long_name: str
    origin_stop_id: str
    origin_name: str
    destination_stop_id: str
    destination_name: str
    departure: int
    arrival: int
    intermediate: tuple[StopCall, ...]
    wheelchair_accessible: Accessibility

    @property
    def stop_ids(self) -> tuple[str, ...]:
        middle = tuple(call.stop_id for call in self.intermediate)
        return (self.origin_stop_id, *middle, self.destination_stop_id)

    def describe(self) -> str:
        """One-line human-readable summary, used for tool observations."""
        stops = "; ".join(
            f"{call.stop_name} {format_clock(call.departure)}" for call in self.intermediate
        )
        middle = f"; intermediate stops: {stops}" if stops else ""
        return (
            f"Trip {self.trip_id} ({self.route_long_name}) from {self.origin_name} "
            f"dep {format_clock(self.departure)} to {self.destination_name} "
            f"arr {format_clock(self.arrival)}{middle}; "
            f"wheelchair accessible: {self.wheelchair_accessible.label}"
        )


@dataclass
class GtfsFeed:
    """Indexed, read-only view of one loaded feed.

    Treat as immutable after load_feed returns: queries never mutate it,
    and it is safe to share across concurrent request handlers.
    """

    stops: dict[str, Stop]
    routes: dict[str, Route]
    trips: dict[str, Trip]
    stop_times: list[StopTime]
    services: dict[str, ServicePattern]
    trip_stop_times: dict[str, tuple[StopTime, ...]] = field(repr=False, default_factory=dict)
    od_trips: dict[tuple[str, str], tuple[str, ...]] = field(repr=False, default_factory=dict)

    def stop_name(self, stop_id: str) -> str:
        return self.stops[stop_id].name


def _read_rows(path: Path) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    with path.open(encoding="utf-8-sig", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedRow(path.name, 1, "missing header row")
        header = [name.strip() for name in reader.fieldnames]
        rows = []
        for i, row in enumerate(reader, start=2):
            cleaned = {
                (k.strip() if k else k): (v if v is not None else "")
                for k, v in row.items()
                if k is not None
            }
            rows.append((i, cleaned))
    return header, rows


def _require_columns(path: Path, header: list[str], names: tuple[str, ...]) -> None:
    for name in names:
        if name not in header:
            raise MalformedRow(path.name, 1, f"missing column {name!r}")


def _cell(row: dict[str, str], column: str) -> str:
    return (row.get(column) or "").strip()


def _load_stops(path: Path) -> dict[str, Stop]:
    header, rows = _read_rows(path)
    _require_columns(path, header, ("stop_id", "stop_name"))
    stops: dict[str, Stop] = {}
    for line, row in rows:
        stop_id = _cell(row, "stop_id")
        name = _cell(row, "stop_name")
        if not stop_id:
            raise MalformedRow(path.name, line, "empty stop_id")
        if not name:
            raise MalformedRow(path.name, line, f"stop {stop_id!r} has an empty name")
        if stop_id in stops:
            raise MalformedRow(path.name, line, f"duplicate stop_id {stop_id!r}")
        try:
            boarding = Accessibility.from_gtfs(_cell(row, "wheelchair_boarding"))
        except ValueError:
            raise MalformedRow(path.name, line, "invalid wheelchair_boarding value") from None
        stops[stop_id] = Stop(stop_id, name, boarding)
    return stops


def _load_routes(path: Path) -> dict[str, Route]:
    header, rows = _read_rows(path)
    _require_columns(path, header, ("route_id",))
    routes: dict[str, Route] = {}
    for line, row in rows:
        route_id = _cell(row, "route_id")
        if not route_id:
            raise MalformedRow(path.name, line, "empty route_id")
        if route_id in routes:
            raise MalformedRow(path.name, line, f"duplicate route_id {route_id!r}")
        long_name = _cell(row, "route_long_name")
        short_name = _cell(row, "route_short_name")
        if not long_name and not short_name:
            raise MalformedRow(path.name, line, f"route {route_id!r} has no name")
        routes[route_id] = Route(route_id, long_name or short_name, short_name or None)
    return routes


def _load_calendar(path: Path) -> dict[str, ServicePattern]:
    header, rows = _read_rows(path)
    _require_columns(path, header, ("service_id",) + _WEEKDAY_COLUMNS)
    services: dict[str, ServicePattern] = {}
    for line, row in rows:
        service_id = _cell(row, "service_id")
        if not service_id:
            raise MalformedRow(path.name, line, "empty service_id")
        if service_id in services:
            raise MalformedRow(path.name, line, f"duplicate service_id {service_id!r}")
        weekdays = set()
        for day_index, column in enumerate(_WEEKDAY_COLUMNS):
            flag = _cell(row, column)
            if flag not in ("0", "1"):
                raise MalformedRow(path.name, line, f"invalid {column} flag {flag!r}")
            if flag == "1":
                weekdays.add(day_index)
        services[service_id] = ServicePattern(
            service_id,
            frozenset(weekdays),
            _cell(row, "start_date"),
            _cell(row, "end_date"),
        )
    return services


def _load_trips(
    path: Path, routes: dict[str, Route], services: dict[str, ServicePattern]
) -> dict[str, Trip]:
    header, rows = _read_rows(path)
    _require_columns(path, header, ("trip_id", "route_id", "service_id"))
    trips: dict[str, Trip] = {}
    for line, row in rows:
        trip_id = _cell(row, "trip_id")
        if not trip_id:
            raise MalformedRow(path.name, line, "empty trip_id")
        if trip_id in trips:
            raise MalformedRow(path.name, line, f"duplicate trip_id {trip_id!r}")
        route_id = _cell(row, "route_id")
        if route_id not in routes:
            raise DanglingReference("route", route_id)
        service_id = _cell(row, "service_id")
        if service_id not in services:
            raise DanglingReference("service", service_id)
        try:
            access = Accessibility.from_gtfs(_cell(row, "wheelchair_accessible"))
        except ValueError:
            raise MalformedRow(path.name, line, "invalid wheelchair_accessible value") from None
        trips[trip_id] = Trip(trip_id, route_id, service_id, _cell(row, "trip_headsign") or None, access)
    return trips


def _load_stop_times(
    path: Path, trips: dict[str, Trip], stops: dict[str, Stop]
) -> list[StopTime]:
    header, rows = _read_rows(path)
    _require_columns(
        path, header, ("trip_id", "stop_id", "arrival_time", "departure_time", "stop_sequence")
    )
    stop_times: list[StopTime] = []
    for line, row in rows:
        trip_id = _cell(row, "trip_id")
        if trip_id not in trips:
            raise DanglingReference("trip", trip_id)
        stop_id = _cell(row, "stop_id")
        if stop_id not in stops:
            raise DanglingReference("stop", stop_id)
        arrival = parse_gtfs_time(_cell(row, "arrival_time"))
        departure = parse_gtfs_time(_cell(row, "departure_time"))
        if arrival is None or departure is None:
            raise MalformedRow(path.name, line, "unparseable arrival/departure time")
        if departure < arrival:
            raise MalformedRow(path.name, line, "departure before arrival")
        try:
            sequence = int(_cell(row, "stop_sequence"))
        except ValueError:
            raise MalformedRow(path.name, line, "invalid stop_sequence") from None
        if sequence <= 0:
            raise MalformedRow(path.name, line, "stop_sequence must be positive")
        stop_times.append(StopTime(trip_id, stop_id, arrival, departure, sequence))
    return stop_times


def load_feed(directory_path: str | Path) -> GtfsFeed:
    """Load and index a GTFS feed directory.

    Deterministic for identical inputs: table order follows file order,
    and per-trip stop-times are sorted by stop_sequence.
    """
    directory = Path(directory_path)
    for filename in REQUIRED_FILES:
        if not (directory / filename).is_file():
            raise MissingFile(filename)

    stops = _load_stops(directory / "stops.txt")
    routes = _load_routes(directory / "routes.txt")
    services = _load_calendar(directory / "calendar.txt")
    trips = _load_trips(directory / "trips.txt", routes, services)
    stop_times = _load_stop_times(directory / "stop_times.txt", trips, stops)

    by_trip: dict[str, list[StopTime]] = {trip_id: [] for trip_id in trips}
    for st in stop_times:
        by_trip[st.trip_id].append(st)

    trip_stop_times: dict[str, tuple[StopTime, ...]] = {}
    for trip_id, entries in by_trip.items():
        if len(entries) < 2:
            raise EmptyTrip(trip_id)
        ordered = sorted(entries, key=lambda st: st.sequence)
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.sequence == prev.sequence:
                raise MalformedRow(
                    "stop_times.txt", 0, f"trip {trip_id!r} repeats stop_sequence {cur.sequence}"
                )
            if cur.arrival < prev.arrival:
                raise MalformedRow(
                    "stop_times.txt", 0, f"trip {trip_id!r} arrival times decrease along the trip"
                )
        trip_stop_times[trip_id] = tuple(ordered)

    od_trips: dict[tuple[str, str], list[str]] = {}
    for trip_id, ordered in trip_stop_times.items():
        for i, origin in enumerate(ordered):
            for destination in ordered[i + 1 :]:
                od_trips.setdefault((origin.stop_id, destination.stop_id), []).append(trip_id)

    feed = GtfsFeed(
        stops=stops,
        routes=routes,
        trips=trips,
        stop_times=stop_times,
        services=services,
        trip_stop_times=trip_stop_times,
        od_trips={od: tuple(ids) for od, ids in od_trips.items()},
    )
    logger.info(
        "loaded GTFS feed: %d stops, %d routes, %d trips, %d stop-times",
        len(stops), len(routes), len(trips), len(stop_times),
    )
    return feed


def _details_from_calls(feed: GtfsFeed, trip: Trip, calls: tuple[StopTime, ...]) -> TripDetails:
    first, last = calls[0], calls[-1]
    middle = tuple(
        StopCall(st.stop_id, feed.stop_name(st.stop_id), st.arrival, st.departure)
        for st in calls[1:-1]
    )
    return TripDetails(
        trip_id=trip.trip_id,
        route_id=trip.route_id,
        route_long_name=feed.routes[trip.route_id].long_name,
        origin_stop_id=first.stop_id,
        origin_name=feed.stop_name(first.stop_id),
        destination_stop_id=last.stop_id,
        destination_name=feed.stop_name(last.stop_id),
        departure=first.departure,
        arrival=last.arrival,
        intermediate=middle,
        wheelchair_accessible=trip.wheelchair_accessible,
    )


def trip_details(feed: GtfsFeed, trip_id: str) -> TripDetails:
    """Assemble details for a whole trip, origin to terminus."""
    trip = feed.trips.get(trip_id)
    if trip is None:
        raise UnknownTrip(trip_id)
    return _details_from_calls(feed, trip, feed.trip_stop_times[trip_id])


def _segment_details(feed: GtfsFeed, trip_id: str, origin: str, destination: str) -> TripDetails:
    calls = feed.trip_stop_times[trip_id]
    start = next(i for i, st in enumerate(calls) if st.stop_id == origin)
    end = next(i for i in range(start + 1, len(calls)) if calls[i].stop_id == destination)
    return _details_from_calls(feed, feed.trips[trip_id], calls[start : end + 1])


def next_departures(
    feed: GtfsFeed, origin: str, destination: str, after: int, limit: int
) -> list[TripDetails]:
    """Direct trips from origin to destination departing at or after `after`.

    Sorted by departure time at the origin, ties broken by trip_id; at most
    `limit` results. Equivalent to a brute-force scan over every trip.
    """
    if origin not in feed.stops:
        raise UnknownStop(origin)
    if destination not in feed.stops:
        raise UnknownStop(destination)
    if origin == destination:
        raise SameStop(origin)
    if limit < 1:
        raise ValueError("limit must be positive")

    matches: list[tuple[int, str]] = []
    for trip_id in feed.od_trips.get((origin, destination), ()):
        calls = feed.trip_stop_times[trip_id]
        departure = next(st.departure for st in calls if st.stop_id == origin)
        if departure >= after:
            matches.append((departure, trip_id))
    matches.sort()
    return [_segment_details(feed, trip_id, origin, destination) for _, trip_id in matches[:limit]]


def resolve_stop_name(feed: GtfsFeed, text: str) -> Stop:
    """Resolve free-text input to a stop.

    Tries, in order: exact stop_id, exact name (case-insensitive), then
    unambiguous name prefix. Raises UnknownStop or AmbiguousStop.
    """
    query = text.strip()
    if not query:
        raise UnknownStop(text)
    if query in feed.stops:
        return feed.stops[query]
    folded = query.casefold()
    exact = [stop for stop in feed.stops.values() if stop.name.casefold() == folded]
    if len(exact) == 1:
        return exact[0]
    if len(exact) > 1:
        raise AmbiguousStop(text, sorted(stop.name for stop in exact))
    prefixed = [stop for stop in feed.stops.values() if stop.name.casefold().startswith(folded)]
    if len(prefixed) == 1:
        return prefixed[0]
    if len(prefixed) > 1:
        raise AmbiguousStop(text, sorted(stop.name for stop in prefixed))
    raise UnknownStop(text)


def find_stop_mentions(feed: GtfsFeed, text: str) -> dict[str, str]:
    """Scan free text for references to feed stops.

    Returns {stop_id: "stated"} for every stop the text names, either by
    full name or by an unambiguous prefix word/phrase (minimum 3 chars).
    """
    mentions: dict[str, str] = {}
    folded = text.casefold()
    for stop in feed.stops.values():
        if stop.name.casefold() in folded:
            mentions[stop.stop_id] = "stated"
    words = [w for w in _tokenize_words(text) if len(w) >= 3]
    grams = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
    for gram in grams:
        try:
            stop = resolve_stop_name(feed, gram)
        except GtfsError:
            continue
        mentions.setdefault(stop.stop_id, "stated")
    return mentions


def _tokenize_words(text: str) -> list[str]:
    return re.findall(r"[0-9A-Za-z]+", text.casefold())
