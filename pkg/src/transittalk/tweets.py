"""Tweet drafting for service alerts.

An agent loop with two schedule tools composes the draft; a deterministic
validator checks preset-format drafts for the facts a rider needs (origin,
destination, times, next trip, hashtags); and a review queue holds every
draft for human approval. Nothing is ever published directly: the queue is
the end of the pipeline.
"""

from __future__ import annotations

import enum
import itertools
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import gtfs
from .agent import AgentTrace, OutcomeKind, ToolError, ToolSpec, run_agent
from .alerts import AlertEvent, AlertKind, AlertStatus, describe_alert
from .gateway import ChatGateway, ChatMessage, CompletionParams, EXTRACTION_PARAMS
from .jsonextract import ExtractionInvalid, call_for_json
from .prompts import load_prompt, render_prompt
from .timetext import format_clock, parse_clock_text

logger = logging.getLogger(__name__)

MAX_TWEET_CHARS = 280
DEFAULT_PROVIDER_HASHTAG = "#GOtransit"


class TweetError(Exception):
    pass


class OverLength(TweetError):
    def __init__(self, length: int):
        super().__init__(f"draft still {length} chars after one shorten retry")
        self.length = length


class UnknownDraft(TweetError):
    def __init__(self, draft_id: str):
        super().__init__(f"no draft with id {draft_id!r}")
        self.draft_id = draft_id


class AlreadyDecided(TweetError):
    def __init__(self, draft_id: str):
        super().__init__(f"draft {draft_id!r} was already decided")
        self.draft_id = draft_id


class ViolationsPresent(TweetError):
    def __init__(self, draft_id: str, count: int):
        super().__init__(f"draft {draft_id!r} has {count} preset violations; cannot approve")
        self.draft_id = draft_id


class FormatMode(enum.Enum):
    PRESET = "preset"
    OPEN = "open"


class ReviewStatus(enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class PresetRule(enum.Enum):
    MISSING_ORIGIN = "MissingOrigin"
    MISSING_DESTINATION = "MissingDestination"
    MISSING_TIME = "MissingTime"
    MISSING_PROVIDER_HASHTAG = "MissingProviderHashtag"
    MISSING_ROUTE_TAG = "MissingRouteTag"
    MISSING_NEXT_TRIP = "MissingNextTrip"
    OVER_LENGTH = "OverLength"


@dataclass(frozen=True)
class PresetViolation:
    rule: PresetRule
    detail: str


@dataclass
class TweetDraft:
    """One drafted tweet awaiting human review.

    Text is immutable after creation; only the review fields transition,
    and only Pending -> Approved or Pending -> Rejected.
    """

    draft_id: str | None
    alert_id: str
    format_mode: FormatMode
    text: str
    trace: AgentTrace | None
    trace_lines: list[str] = field(default_factory=list)
    review_status: ReviewStatus = ReviewStatus.PENDING
    reviewer_note: str | None = None
    violations: list[PresetViolation] = field(default_factory=list)
    failure_reason: str | None = None
    created_at: float = 0.0


def route_hashtag(route_long_name: str) -> str:
    """Hashtag for a route line name: "Lakeshore East" -> "#LakeshoreEast"."""
    return "#" + re.sub(r"[^0-9A-Za-z]", "", route_long_name)


# --- structured argument extraction ------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # "string" | "identifier" | "time"

    def __post_init__(self):
        if self.kind not in ("string", "identifier", "time"):
            raise ValueError(f"unknown field kind {self.kind!r}")


_FIELD_HINTS = {
    "string": "free text",
    "identifier": "an exact identifier, copied verbatim",
    "time": "a time of day in 24-hour HH:MM form",
}


def extract_tool_args(
    instruction_text: str, schema: Sequence[FieldSpec], gateway: ChatGateway
) -> dict[str, str | int]:
    """Pull schema fields out of a natural-language instruction.

    One cold completion returns a JSON object validated against the
    schema: missing or extra fields are rejected (with one guided retry).
    Time fields are returned as seconds past midnight.
    """
    names = [spec.name for spec in schema]
    system = render_prompt(
        "extract_args",
        field_names=", ".join(f'"{n}"' for n in names),
        field_lines="\n".join(
            f'- "{spec.name}": {_FIELD_HINTS[spec.kind]}' for spec in schema
        ),
    )

    def validate(obj: dict) -> dict:
        for name in names:
            if name not in obj:
                raise ValueError(f"missing field {name!r}; expected exactly: {', '.join(names)}")
        for key in obj:
            if key not in names:
                raise ValueError(f"unexpected field {key!r}; expected exactly: {', '.join(names)}")
        result: dict[str, str | int] = {}
        for spec in schema:
            value = obj[spec.name]
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"field {spec.name!r} must be a non-empty string")
            if spec.kind == "time":
                seconds = parse_clock_text(value)
                if seconds is None:
                    raise ValueError(f"field {spec.name!r} is not a recognized time: {value!r}")
                result[spec.name] = seconds
            else:
                result[spec.name] = value.strip()
        return result

    return call_for_json(gateway, system, f"Instruction: {instruction_text}", validate)


# --- agent tools --------------------------------------------------------


def build_tweet_tools(
    feed: gtfs.GtfsFeed, gateway: ChatGateway, exclude_trip_id: str | None = None
) -> list[ToolSpec]:
    """The two schedule tools the drafting agent may call.

    Tool input is natural language; an inner extraction call turns it into
    structured query arguments. The next-trip tool skips the alerted trip
    itself so "next available" never returns the disrupted departure.
    """

    def find_trip_info(instruction: str) -> str:
        try:
            args = extract_tool_args(instruction, [FieldSpec("trip_id", "identifier")], gateway)
        except ExtractionInvalid as exc:
            raise ToolError(f"could not extract a trip id: {exc}") from None
        try:
            details = gtfs.trip_details(feed, str(args["trip_id"]))
        except gtfs.UnknownTrip as exc:
            raise ToolError(str(exc)) from None
        return details.describe()

    def find_next_available_trip(instruction: str) -> str:
        schema = [
            FieldSpec("origin", "string"),
            FieldSpec("destination", "string"),
            FieldSpec("after", "time"),
        ]
        try:
            args = extract_tool_args(instruction, schema, gateway)
        except ExtractionInvalid as exc:
            raise ToolError(f"could not extract the query: {exc}") from None
        try:
            origin = gtfs.resolve_stop_name(feed, str(args["origin"]))
            destination = gtfs.resolve_stop_name(feed, str(args["destination"]))
        except gtfs.GtfsError as exc:
            raise ToolError(str(exc)) from None
        after = int(args["after"])
        try:
            results = gtfs.next_departures(feed, origin.stop_id, destination.stop_id, after, 3)
        except gtfs.GtfsError as exc:
            raise ToolError(str(exc)) from None
        results = [d for d in results if d.trip_id != exclude_trip_id]
        if not results:
            return (
                f"no trips found from {origin.name} to {destination.name} "
                f"after {format_clock(after)}"
            )
        best = results[0]
        return (
            f"Next available trip: {best.trip_id} departing {best.origin_name} at "
            f"{format_clock(best.departure)}, arriving {best.destination_name} at "
            f"{format_clock(best.arrival)}"
        )

    return [
        ToolSpec(
            "find_trip_info",
            "Looks up one trip's details: route, origin, destination, "
            "departure and arrival times, stops, and accessibility.",
            "the trip you need details for, e.g. \"the trip with id LE-101\"",
            find_trip_info,
        ),
        ToolSpec(
            "find_next_available_trip",
            "Finds the next trip between two stops departing at or after a "
            "given time. Use it for canceled or on-hold trips so riders get "
            "an alternative.",
            "origin, destination, and earliest departure time in natural language",
            find_next_available_trip,
        ),
    ]


# --- composition ---------------------------------------------------------


def alert_trip_context(
    feed: gtfs.GtfsFeed, alert: AlertEvent
) -> tuple[gtfs.TripDetails | None, gtfs.TripDetails | None]:
    """Resolve the alert's trip and, when relevant, the next alternative.

    For canceled/on-hold trip alerts the alternative is the first departure
    on the same origin-destination pair at or after the alerted departure,
    excluding the alerted trip itself. Station alerts resolve to (None,
    None).
    """
    if alert.kind is not AlertKind.TRIP or not alert.trip_id:
        return None, None
    resolved = gtfs.trip_details(feed, alert.trip_id)
    next_trip = None
    if alert.status in (AlertStatus.CANCELED, AlertStatus.ON_HOLD):
        candidates = gtfs.next_departures(
            feed, resolved.origin_stop_id, resolved.destination_stop_id, resolved.departure, 3
        )
        candidates = [d for d in candidates if d.trip_id != alert.trip_id]
        next_trip = candidates[0] if candidates else None
    return resolved, next_trip


def compose_tweet(
    alert: AlertEvent,
    format_mode: FormatMode,
    feed: gtfs.GtfsFeed,
    gateway: ChatGateway,
    *,
    provider_hashtag: str = DEFAULT_PROVIDER_HASHTAG,
    budget: int = 8,
    clock: Callable[[], float] = time.time,
) -> TweetDraft:
    """Draft a tweet for one alert; the draft enters review as Pending.

    If the agent fails to answer, the draft is still created with the
    failure trace attached and flagged for manual authoring. A final
    answer over 280 characters gets one automatic shorten retry; if it is
    still too long, OverLength is raised.
    """
    tools = build_tweet_tools(feed, gateway, exclude_trip_id=alert.trip_id)
    resolved, next_trip = alert_trip_context(feed, alert)

    if format_mode is FormatMode.PRESET and resolved is not None:
        format_segment = render_prompt(
            "tweet_preset_format",
            route_hashtag=route_hashtag(resolved.route_long_name),
            provider_hashtag=provider_hashtag,
        )
    else:
        # Station alerts have no route to tag, so preset mode falls back
        # to the open segment; validation falls back the same way.
        format_segment = render_prompt("tweet_open_format", provider_hashtag=provider_hashtag)
    system = load_prompt("tweet_cot") + "\n" + format_segment

    params = CompletionParams(
        temperature=0.7 if format_mode is FormatMode.OPEN else 0.0,
        stop_sequences=("Observation:",),
    )
    task = f"Write a tweet for this service alert.\nAlert: {describe_alert(alert)}"
    trace = run_agent(task, system, tools, gateway, budget=budget, params=params)

    if not trace.answered:
        logger.warning("tweet agent failed for alert %s: %s", alert.alert_id, trace.outcome.kind.value)
        return TweetDraft(
            draft_id=None,
            alert_id=alert.alert_id,
            format_mode=format_mode,
            text="",
            trace=trace,
            trace_lines=trace.to_log_lines(),
            failure_reason=trace.outcome.kind.value,
            created_at=clock(),
        )

    text = trace.outcome.text
    if len(text) > MAX_TWEET_CHARS:
        shortened = gateway.complete(
            [ChatMessage.system(load_prompt("shorten")), ChatMessage.user(text)],
            EXTRACTION_PARAMS,
        )
        text = shortened.text.strip()
        if len(text) > MAX_TWEET_CHARS:
            raise OverLength(len(text))

    if format_mode is FormatMode.PRESET and resolved is not None:
        violations = validate_preset(
            text, alert, resolved, next_trip, provider_hashtag=provider_hashtag
        )
    else:
        violations = validate_open(text, provider_hashtag)

    return TweetDraft(
        draft_id=None,
        alert_id=alert.alert_id,
        format_mode=format_mode,
        text=text,
        trace=trace,
        trace_lines=trace.to_log_lines(),
        violations=violations,
        created_at=clock(),
    )


# --- validation ----------------------------------------------------------


def validate_preset(
    draft_text: str,
    alert: AlertEvent,
    resolved: gtfs.TripDetails,
    next_trip: gtfs.TripDetails | None,
    *,
    provider_hashtag: str = DEFAULT_PROVIDER_HASHTAG,
) -> list[PresetViolation]:
    """Check a preset-format draft against the facts a rider needs.

    Returns the list of violations; an empty list means compliant.
    """
    text = draft_text.lower()
    violations: list[PresetViolation] = []

    if resolved.origin_name.lower() not in text:
        violations.append(
            PresetViolation(PresetRule.MISSING_ORIGIN, f"origin {resolved.origin_name!r} not mentioned")
        )
    if resolved.destination_name.lower() not in text:
        violations.append(
            PresetViolation(
                PresetRule.MISSING_DESTINATION,
                f"destination {resolved.destination_name!r} not mentioned",
            )
        )
    departure = format_clock(resolved.departure)
    arrival = format_clock(resolved.arrival)
    missing_times = [t for t in (departure, arrival) if t not in draft_text]
    if missing_times:
        violations.append(
            PresetViolation(PresetRule.MISSING_TIME, f"missing time(s): {', '.join(missing_times)}")
        )
    if provider_hashtag.lower() not in text:
        violations.append(
            PresetViolation(
                PresetRule.MISSING_PROVIDER_HASHTAG, f"provider tag {provider_hashtag} absent"
            )
        )
    tag = route_hashtag(resolved.route_long_name)
    if tag.lower() not in text:
        violations.append(
            PresetViolation(PresetRule.MISSING_ROUTE_TAG, f"route tag {tag} absent")
        )
    if (
        alert.status in (AlertStatus.CANCELED, AlertStatus.ON_HOLD)
        and next_trip is not None
        and next_trip.trip_id not in draft_text
        and format_clock(next_trip.departure) not in draft_text
    ):
        violations.append(
            PresetViolation(
                PresetRule.MISSING_NEXT_TRIP,
                f"no mention of next trip {next_trip.trip_id} "
                f"({format_clock(next_trip.departure)})",
            )
        )
    if len(draft_text) > MAX_TWEET_CHARS:
        violations.append(
            PresetViolation(PresetRule.OVER_LENGTH, f"{len(draft_text)} chars > {MAX_TWEET_CHARS}")
        )
    return violations


def validate_open(draft_text: str, provider_hashtag: str = DEFAULT_PROVIDER_HASHTAG) -> list[PresetViolation]:
    """Open format checks only length and the provider hashtag."""
    violations = []
    if provider_hashtag.lower() not in draft_text.lower():
        violations.append(
            PresetViolation(
                PresetRule.MISSING_PROVIDER_HASHTAG, f"provider tag {provider_hashtag} absent"
            )
        )
    if len(draft_text) > MAX_TWEET_CHARS:
        violations.append(
            PresetViolation(PresetRule.OVER_LENGTH, f"{len(draft_text)} chars > {MAX_TWEET_CHARS}")
        )
    return violations


# --- review queue --------------------------------------------------------


class DraftQueue:
    """Pending-review drafts with compare-and-set review transitions.

    Composition episodes may add drafts concurrently; each draft's review
    transition is serialized under the queue lock. An optional persist
    hook runs before any mutation commits, so a failed persist leaves the
    queue unchanged.
    """

    def __init__(
        self,
        id_factory: Callable[[], str] | None = None,
        persist: Callable[[TweetDraft], None] | None = None,
    ):
        counter = itertools.count(1)
        self._id_factory = id_factory or (lambda: f"d-{next(counter):04d}")
        self._persist = persist
        self._drafts: dict[str, TweetDraft] = {}
        self._lock = threading.Lock()

    def create(self, draft: TweetDraft) -> TweetDraft:
        with self._lock:
            if draft.draft_id is None:
                draft.draft_id = self._id_factory()
            if draft.draft_id in self._drafts:
                raise TweetError(f"duplicate draft id {draft.draft_id!r}")
            if self._persist:
                self._persist(draft)
            self._drafts[draft.draft_id] = draft
        return draft

    def get(self, draft_id: str) -> TweetDraft:
        with self._lock:
            if draft_id not in self._drafts:
                raise UnknownDraft(draft_id)
            return self._drafts[draft_id]

    def list_drafts(self) -> list[TweetDraft]:
        with self._lock:
            return list(self._drafts.values())

    def review(self, draft_id: str, approve: bool, note: str | None = None) -> TweetDraft:
        """Transition Pending -> Approved/Rejected exactly once.

        Approval of a preset draft with outstanding violations is refused:
        approved preset drafts always validated clean at approval time.
        """
        with self._lock:
            draft = self._drafts.get(draft_id)
            if draft is None:
                raise UnknownDraft(draft_id)
            if draft.review_status is not ReviewStatus.PENDING:
                raise AlreadyDecided(draft_id)
            if approve and draft.format_mode is FormatMode.PRESET and draft.violations:
                raise ViolationsPresent(draft_id, len(draft.violations))
            new_status = ReviewStatus.APPROVED if approve else ReviewStatus.REJECTED
            if self._persist:
                snapshot = (draft.review_status, draft.reviewer_note)
                draft.review_status = new_status
                draft.reviewer_note = note
                try:
                    self._persist(draft)
                except Exception:
                    draft.review_status, draft.reviewer_note = snapshot
                    raise
            else:
                draft.review_status = new_status
                draft.reviewer_note = note
            return draft


# --- serialization -------------------------------------------------------


def draft_to_dict(draft: TweetDraft) -> dict:
    return {
        "draft_id": draft.draft_id,
        "alert_id": draft.alert_id,
        "format_mode": draft.format_mode.value,
        "text": draft.text,
        "trace_lines": list(draft.trace_lines),
        "review_status": draft.review_status.value,
        "reviewer_note": draft.reviewer_note,
        "violations": [
            {"rule": v.rule.value, "detail": v.detail} for v in draft.violations
        ],
        "failure_reason": draft.failure_reason,
        "created_at": draft.created_at,
    }


def draft_from_dict(record: dict) -> TweetDraft:
    return TweetDraft(
        draft_id=record["draft_id"],
        alert_id=record["alert_id"],
        format_mode=FormatMode(record["format_mode"]),
        text=record["text"],
        trace=None,
        trace_lines=list(record.get("trace_lines", [])),
        review_status=ReviewStatus(record["review_status"]),
        reviewer_note=record.get("reviewer_note"),
        violations=[
            PresetViolation(PresetRule(v["rule"]), v["detail"])
            for v in record.get("violations", [])
        ],
        failure_reason=record.get("failure_reason"),
        created_at=record.get("created_at", 0.0),
    )
