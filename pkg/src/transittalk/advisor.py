"""Conversational trip planning in three phases.

Gathering collects origin, destination, departure time, and special needs
across turns, remembering everything already given. On handoff a single
extraction call turns the whole history into a structured request, which
is validated against the conversation: a slot value the rider never gave
(verbatim or via the stop-name/time resolution rules) is rejected, never
queried. The schedule query and an alert relevance check then feed a
grounded suggestion whose fact block is attached for human inspection.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace

from . import gtfs
from .alerts import AlertEvent, AlertKind, describe_alert
from .gateway import ChatGateway, ChatMessage, CompletionParams, EXTRACTION_PARAMS, GatewayError, Role
from .jsonextract import ExtractionInvalid, call_for_json
from .prompts import render_prompt
from .timetext import find_time_mentions, format_clock, parse_clock_text

logger = logging.getLogger(__name__)

CONCLUDE_MARKER = "CONCLUDE"
DEFAULT_TRIP_LIMIT = 3

RETRY_REPLY = "Sorry, I'm having trouble answering right now. Could you try that again?"
NO_TRIPS_REPLY = "I could not find any direct trips from {origin} to {destination} after {after}."

# Special-need keywords recognized during the deterministic message scan.
_NEED_WORDS = {
    "wheelchair": "wheelchair",
    "bike": "bike",
    "bicycle": "bike",
    "stroller": "stroller",
}

_ORIGIN_CUES = ("from", "leaving", "leave", "depart", "departing", "starting")
_DESTINATION_CUES = ("to", "toward", "towards", "reach", "arrive", "arriving", "destination")


class AdvisorError(Exception):
    pass


class UnknownStopName(AdvisorError):
    def __init__(self, name: str):
        super().__init__(f"no stop matches {name!r}")
        self.name = name


class SlotState(enum.Enum):
    MISSING = "missing"
    STATED = "stated"
    INFERRED = "inferred"


class Phase(enum.Enum):
    GATHERING = "gathering"
    QUERYING = "querying"
    SUGGESTING = "suggesting"
    DONE = "done"


@dataclass
class TripRequest:
    origin_stop_id: str | None = None
    origin_name: str | None = None
    destination_stop_id: str | None = None
    destination_name: str | None = None
    departure_after: int | None = None
    special_needs: list[str] = field(default_factory=list)
    origin_state: SlotState = SlotState.MISSING
    destination_state: SlotState = SlotState.MISSING
    departure_state: SlotState = SlotState.MISSING

    @property
    def queryable(self) -> bool:
        return (
            self.origin_state is not SlotState.MISSING
            and self.destination_state is not SlotState.MISSING
            and self.departure_state is not SlotState.MISSING
            and None not in (self.origin_stop_id, self.destination_stop_id, self.departure_after)
        )

    def to_dict(self) -> dict:
        return {
            "origin_stop_id": self.origin_stop_id,
            "origin_name": self.origin_name,
            "destination_stop_id": self.destination_stop_id,
            "destination_name": self.destination_name,
            "departure_after": self.departure_after,
            "special_needs": list(self.special_needs),
            "origin_state": self.origin_state.value,
            "destination_state": self.destination_state.value,
            "departure_state": self.departure_state.value,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "TripRequest":
        return cls(
            origin_stop_id=record.get("origin_stop_id"),
            origin_name=record.get("origin_name"),
            destination_stop_id=record.get("destination_stop_id"),
            destination_name=record.get("destination_name"),
            departure_after=record.get("departure_after"),
            special_needs=list(record.get("special_needs", [])),
            origin_state=SlotState(record.get("origin_state", "missing")),
            destination_state=SlotState(record.get("destination_state", "missing")),
            departure_state=SlotState(record.get("departure_state", "missing")),
        )


@dataclass
class ConversationState:
    session_id: str
    phase: Phase = Phase.GATHERING
    history: list[ChatMessage] = field(default_factory=list)
    partial: TripRequest = field(default_factory=TripRequest)
    last_request: TripRequest | None = None


@dataclass(frozen=True)
class RelevantAlert:
    alert: AlertEvent
    rationale: str
    verified: bool = True


@dataclass(frozen=True)
class AdvisorReply:
    text: str
    fact_block: str | None = None


# --- deterministic slot scanning ----------------------------------------


def scan_message_slots(partial: TripRequest, message: str, feed: gtfs.GtfsFeed) -> None:
    """Update slots from one user message without any model call.

    Stop mentions with a "from"/"to" cue word fill (or revise) the cued
    slot; an uncued mention fills the first missing one. Time mentions use
    the clock patterns and the daypart table; special-need keywords append
    tags. Values only ever come from the rider's own words.
    """
    mention_ids = list(gtfs.find_stop_mentions(feed, message).keys())
    lowered = message.casefold()
    for stop_id in mention_ids:
        stop = feed.stops[stop_id]
        cue = _mention_cue(lowered, stop, feed)
        if cue == "origin":
            _set_stop(partial, "origin", stop)
        elif cue == "destination":
            _set_stop(partial, "destination", stop)
        elif partial.origin_state is SlotState.MISSING:
            _set_stop(partial, "origin", stop)
        elif partial.destination_state is SlotState.MISSING:
            _set_stop(partial, "destination", stop)

    times = find_time_mentions(message)
    if times:
        seconds, state = next(iter(times.items()))
        for candidate, candidate_state in times.items():
            if candidate_state == "stated" and state != "stated":
                seconds, state = candidate, candidate_state
        partial.departure_after = seconds
        partial.departure_state = SlotState.STATED if state == "stated" else SlotState.INFERRED

    for word, tag in _NEED_WORDS.items():
        if re.search(rf"\b{word}\b", lowered) and tag not in partial.special_needs:
            partial.special_needs.append(tag)


def _set_stop(partial: TripRequest, slot: str, stop: gtfs.Stop) -> None:
    setattr(partial, f"{slot}_stop_id", stop.stop_id)
    setattr(partial, f"{slot}_name", stop.name)
    setattr(partial, f"{slot}_state", SlotState.STATED)


def _mention_cue(lowered: str, stop: gtfs.Stop, feed: gtfs.GtfsFeed) -> str | None:
    """Find the word right before the stop mention: from-cue or to-cue."""
    surfaces = [stop.name.casefold()]
    surfaces += [w for w in stop.name.casefold().split() if len(w) >= 3]
    best: str | None = None
    for surface in surfaces:
        for m in re.finditer(re.escape(surface), lowered):
            prefix_words = re.findall(r"[a-z0-9]+", lowered[: m.start()])
            if not prefix_words:
                continue
            last = prefix_words[-1]
            if last in _ORIGIN_CUES:
                return "origin"
            if last in _DESTINATION_CUES:
                best = best or "destination"
    return best


# --- structured extraction ------------------------------------------------


def render_history(history: list[ChatMessage]) -> str:
    lines = []
    for message in history:
        speaker = "Rider" if message.role is Role.USER else "Assistant"
        lines.append(f"{speaker}: {message.content}")
    return "\n".join(lines)


def extract_request(
    history: list[ChatMessage], gateway: ChatGateway, feed: gtfs.GtfsFeed
) -> TripRequest:
    """One cold extraction call over the whole history, then validation.

    Schema failures get one guided retry. Semantic failures are immediate:
    unresolvable stop names raise UnknownStopName/AmbiguousStop, and a slot
    value with no supporting mention anywhere in the rider's turns raises
    ExtractionInvalid (the extractor may not invent values).
    """
    system = "You turn rider conversations into structured trip requests."
    user = render_prompt("trip_extract", history=render_history(history))
    keys = ("origin", "destination", "departure_after", "special_needs")

    def validate(obj: dict) -> dict:
        for key in keys:
            if key not in obj:
                raise ValueError(f"missing key {key!r}")
        for key in obj:
            if key not in keys:
                raise ValueError(f"unexpected key {key!r}")
        for key in ("origin", "destination", "departure_after"):
            if not isinstance(obj[key], str) or not obj[key].strip():
                raise ValueError(f"key {key!r} must be a non-empty string")
        if parse_clock_text(obj["departure_after"]) is None:
            raise ValueError(f"departure_after {obj['departure_after']!r} is not a recognized time")
        needs = obj["special_needs"]
        if not isinstance(needs, list) or any(not isinstance(n, str) for n in needs):
            raise ValueError("special_needs must be a list of strings")
        return obj

    obj = call_for_json(gateway, system, user, validate)

    user_text = " ".join(m.content for m in history if m.role is Role.USER)
    stop_mentions = gtfs.find_stop_mentions(feed, user_text)
    time_mentions = find_time_mentions(user_text)

    request = TripRequest()
    for slot in ("origin", "destination"):
        name = str(obj[slot]).strip()
        try:
            stop = gtfs.resolve_stop_name(feed, name)
        except gtfs.UnknownStop:
            raise UnknownStopName(name) from None
        if stop.stop_id not in stop_mentions:
            raise ExtractionInvalid(
                f"{slot} {name!r} does not appear in the rider's messages"
            )
        _set_stop(request, slot, stop)

    seconds = parse_clock_text(str(obj["departure_after"]))
    assert seconds is not None
    if seconds not in time_mentions:
        raise ExtractionInvalid(
            f"departure time {obj['departure_after']!r} does not appear in the rider's messages"
        )
    request.departure_after = seconds
    request.departure_state = (
        SlotState.STATED if time_mentions[seconds] == "stated" else SlotState.INFERRED
    )

    lowered = user_text.casefold()
    for tag in obj["special_needs"]:
        tag = tag.strip().lower()
        if tag and re.search(rf"\b{re.escape(tag)}\b", lowered):
            if tag not in request.special_needs:
                request.special_needs.append(tag)
        elif tag:
            logger.info("dropping ungrounded special-need tag %r", tag)
    return request


# --- alert relevance -------------------------------------------------------


def filter_relevant_alerts(
    trip: gtfs.TripDetails,
    request: TripRequest,
    alerts: list[AlertEvent],
    gateway: ChatGateway,
    *,
    feed: gtfs.GtfsFeed | None = None,
) -> list[RelevantAlert]:
    """Keep the alerts that matter for this trip.

    A deterministic pre-filter keeps only alerts referencing the trip, its
    route (resolvable when the feed is supplied), or a stop it serves; no
    model call happens for anything else. Each survivor gets one verdict
    call; an unreadable verdict or a gateway failure includes the alert
    conservatively, marked unverified.
    """
    trip_stops = set(trip.stop_ids)
    candidates = []
    for alert in alerts:
        if alert.trip_id and alert.trip_id == trip.trip_id:
            candidates.append(alert)
        elif alert.stop_id and alert.stop_id in trip_stops:
            candidates.append(alert)
        elif (
            alert.trip_id
            and feed is not None
            and feed.trips.get(alert.trip_id) is not None
            and feed.trips[alert.trip_id].route_id == trip.route_id
        ):
            candidates.append(alert)

    relevant: list[RelevantAlert] = []
    for alert in candidates:
        user = render_prompt(
            "trip_relevance",
            alert=describe_alert(alert),
            trip=trip.describe(),
            needs=", ".join(request.special_needs) or "(none)",
        )
        try:
            result = gateway.complete(
                [
                    ChatMessage.system("You check whether service alerts matter for a rider's trip."),
                    ChatMessage.user(user),
                ],
                EXTRACTION_PARAMS,
            )
        except GatewayError:
            relevant.append(
                RelevantAlert(alert, "could not verify relevance; included as a precaution", False)
            )
            continue
        verdict = result.text.strip()
        lowered = verdict.lower()
        if lowered.startswith("relevant"):
            relevant.append(RelevantAlert(alert, verdict.split(":", 1)[-1].strip()))
        elif lowered.startswith("irrelevant"):
            continue
        else:
            relevant.append(
                RelevantAlert(alert, "could not verify relevance; included as a precaution", False)
            )
    return relevant


# --- suggestion rendering ---------------------------------------------------


def accessible_only(candidates: list[gtfs.TripDetails]) -> list[gtfs.TripDetails]:
    return [
        d for d in candidates if d.wheelchair_accessible is gtfs.Accessibility.ACCESSIBLE
    ]


def build_fact_block(
    candidates: list[gtfs.TripDetails], relevant_alerts: list[RelevantAlert]
) -> str:
    lines = ["Candidate trips:"]
    if candidates:
        for details in candidates:
            access = (
                "; wheelchair accessible"
                if details.wheelchair_accessible is gtfs.Accessibility.ACCESSIBLE
                else ""
            )
            lines.append(
                f"- {details.trip_id} ({details.route_long_name}): "
                f"{details.origin_name} {format_clock(details.departure)} -> "
                f"{details.destination_name} {format_clock(details.arrival)}{access}"
            )
    else:
        lines.append("- (none)")
    lines.append("Service alerts:")
    if relevant_alerts:
        for item in relevant_alerts:
            marker = "" if item.verified else " [unverified]"
            lines.append(f"- {describe_alert(item.alert)} ({item.rationale}){marker}")
    else:
        lines.append("- (none)")
    return "\n".join(lines)


def render_suggestion(
    candidates: list[gtfs.TripDetails],
    request: TripRequest,
    relevant_alerts: list[RelevantAlert],
    gateway: ChatGateway,
) -> AdvisorReply:
    """One grounded generation call over the fact block.

    Wheelchair requests never see non-accessible candidates; an empty
    candidate list yields a fixed "no direct trips" reply with no model
    call, never an invented itinerary.
    """
    if "wheelchair" in request.special_needs:
        candidates = accessible_only(candidates)

    fact_block = build_fact_block(candidates, relevant_alerts)
    if not candidates:
        after = format_clock(request.departure_after or 0)
        return AdvisorReply(
            NO_TRIPS_REPLY.format(
                origin=request.origin_name or "?",
                destination=request.destination_name or "?",
                after=after,
            ),
            fact_block,
        )

    summary = (
        f"{request.origin_name} to {request.destination_name} after "
        f"{format_clock(request.departure_after or 0)}; needs: "
        f"{', '.join(request.special_needs) or '(none)'}"
    )
    user = render_prompt("trip_suggest", request=summary, facts=fact_block)
    result = gateway.complete(
        [
            ChatMessage.system("You write grounded trip suggestions for riders."),
            ChatMessage.user(user),
        ],
        CompletionParams(temperature=0.0),
    )
    return AdvisorReply(result.text.strip(), fact_block)


# --- the conversation loop ---------------------------------------------------


def build_slots_block(partial: TripRequest) -> str:
    def slot_line(label: str, name: str | None, state: SlotState, extra: str = "") -> str:
        if state is SlotState.MISSING or name is None:
            return f"{label}: (not yet known)"
        return f"{label}: {name}{extra} ({state.value})"

    time_text = (
        format_clock(partial.departure_after) if partial.departure_after is not None else None
    )
    lines = [
        slot_line("origin", partial.origin_name, partial.origin_state),
        slot_line("destination", partial.destination_name, partial.destination_state),
        slot_line("departure after", time_text, partial.departure_state),
    ]
    needs = ", ".join(partial.special_needs) if partial.special_needs else "(none mentioned)"
    lines.append(f"special needs: {needs}")
    return "\n".join(lines)


def advance_conversation(
    state: ConversationState,
    user_message: str,
    gateway: ChatGateway,
    feed: gtfs.GtfsFeed,
    alerts: list[AlertEvent],
    *,
    trip_limit: int = DEFAULT_TRIP_LIMIT,
) -> tuple[ConversationState, AdvisorReply]:
    """Run one conversation turn; returns the state and the reply.

    The state is mutated in place and also returned. Phases only advance,
    except that a new message while Suggesting reopens Gathering (a
    revision). Gateway failures produce an apologetic retry reply without
    corrupting phase or slots.
    """
    if state.phase is Phase.DONE:
        raise AdvisorError("conversation is already done")
    if state.phase is Phase.SUGGESTING:
        state.phase = Phase.GATHERING

    state.history.append(ChatMessage.user(user_message))
    scan_message_slots(state.partial, user_message, feed)

    system = render_prompt("trip_gathering", slots_block=build_slots_block(state.partial))
    try:
        result = gateway.complete(
            [ChatMessage.system(system), *state.history], CompletionParams(temperature=0.0)
        )
    except GatewayError:
        reply = AdvisorReply(RETRY_REPLY)
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply

    gathered = result.text.strip()
    if gathered != CONCLUDE_MARKER:
        reply = AdvisorReply(gathered)
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply

    # Handoff: extract, query, filter, suggest.
    try:
        request = extract_request(state.history, gateway, feed)
    except UnknownStopName as exc:
        reply = AdvisorReply(
            f"I don't recognize the stop {exc.name!r}. Could you give the station name as "
            f"it appears on the network map?"
        )
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply
    except gtfs.AmbiguousStop as exc:
        reply = AdvisorReply(
            f"{exc.name!r} matches several stops ({', '.join(exc.candidates)}). Which one "
            f"did you mean?"
        )
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply
    except ExtractionInvalid as exc:
        logger.warning("trip extraction failed: %s", exc)
        reply = AdvisorReply(
            "I couldn't pin down the trip details from our conversation. Could you restate "
            "the origin, destination, and time?"
        )
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply
    except GatewayError:
        reply = AdvisorReply(RETRY_REPLY)
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply

    if request.origin_stop_id == request.destination_stop_id:
        reply = AdvisorReply(
            "The origin and destination look like the same stop. Where are you headed?"
        )
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply

    try:
        state.phase = Phase.QUERYING
        assert request.origin_stop_id and request.destination_stop_id
        assert request.departure_after is not None
        candidates = gtfs.next_departures(
            feed,
            request.origin_stop_id,
            request.destination_stop_id,
            request.departure_after,
            trip_limit,
        )
        if "wheelchair" in request.special_needs:
            candidates = accessible_only(candidates)

        relevant = (
            filter_relevant_alerts(candidates[0], request, alerts, gateway, feed=feed)
            if candidates
            else []
        )

        state.phase = Phase.SUGGESTING
        reply = render_suggestion(candidates, request, relevant, gateway)
    except GatewayError:
        state.phase = Phase.GATHERING
        reply = AdvisorReply(RETRY_REPLY)
        state.history.append(ChatMessage.assistant(reply.text))
        return state, reply
    state.history.append(ChatMessage.assistant(reply.text))
    state.partial = replace_partial_after_done(request)
    state.last_request = request
    state.phase = Phase.DONE
    return state, reply


def replace_partial_after_done(request: TripRequest) -> TripRequest:
    """The completed request becomes the snapshot kept with the session."""
    return replace(request, special_needs=list(request.special_needs))
