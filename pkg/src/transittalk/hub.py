"""The TransitTalk hub: one front door for the three applications.

Every user message is routed by a classifier call to the trip advisor,
the policy navigator, or (for staff) the tweet writer. Chat history is a
single shared stream: whichever application answers, routing and
extraction read the same memory, so context given once is never asked for
again. Turns are atomic: a turn that cannot be persisted leaves no trace.
"""

from __future__ import annotations

import copy
import enum
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import advisor as advisor_mod
from . import gtfs, policy, tweets
from .alerts import AlertEvent, load_alerts
from .config import AppConfig, ConfigError
from .gateway import (
    ChatGateway,
    ChatMessage,
    EXTRACTION_PARAMS,
    GatewayError,
    RemoteGateway,
    Role,
    ScriptedGateway,
)
from .prompts import render_prompt
from .vectorstore import EmptyStore, VectorStore

logger = logging.getLogger(__name__)

ROUTER_HISTORY_TURNS = 6
_STATE_VERSION = 1


class HubError(Exception):
    pass


class PersistenceError(HubError):
    pass


class UnknownAlert(HubError):
    def __init__(self, alert_id: str):
        super().__init__(f"no alert with id {alert_id!r}")
        self.alert_id = alert_id


class AppTarget(enum.Enum):
    TRIP_ADVISOR = "trip_advisor"
    POLICY_NAVIGATOR = "policy_navigator"
    TWEET_WRITER = "tweet_writer"
    UNCLEAR = "unclear"


_ROUTE_LABELS = {
    "tripadvisor": AppTarget.TRIP_ADVISOR,
    "policynavigator": AppTarget.POLICY_NAVIGATOR,
    "tweetwriter": AppTarget.TWEET_WRITER,
    "unclear": AppTarget.UNCLEAR,
}


@dataclass(frozen=True)
class HistoryEntry:
    role: Role
    content: str
    app: str | None = None


@dataclass
class Session:
    session_id: str
    history: list[HistoryEntry] = field(default_factory=list)
    advisor_phase: advisor_mod.Phase = advisor_mod.Phase.GATHERING
    advisor_partial: advisor_mod.TripRequest = field(default_factory=advisor_mod.TripRequest)
    advisor_last: advisor_mod.TripRequest | None = None
    created_at: float = 0.0
    updated_at: float = 0.0

    def chat_messages(self) -> list[ChatMessage]:
        return [ChatMessage(entry.role, entry.content) for entry in self.history]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "history": [
                {"role": e.role.value, "content": e.content, "app": e.app} for e in self.history
            ],
            "advisor": {
                "phase": self.advisor_phase.value,
                "partial": self.advisor_partial.to_dict(),
                "last_request": self.advisor_last.to_dict() if self.advisor_last else None,
            },
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "Session":
        adv = record.get("advisor", {})
        last = adv.get("last_request")
        return cls(
            session_id=record["session_id"],
            history=[
                HistoryEntry(Role(e["role"]), e["content"], e.get("app"))
                for e in record.get("history", [])
            ],
            advisor_phase=advisor_mod.Phase(adv.get("phase", "gathering")),
            advisor_partial=advisor_mod.TripRequest.from_dict(adv.get("partial", {})),
            advisor_last=advisor_mod.TripRequest.from_dict(last) if last else None,
            created_at=record.get("created_at", 0.0),
            updated_at=record.get("updated_at", 0.0),
        )


@dataclass(frozen=True)
class HubReply:
    session_id: str
    reply: str
    app: AppTarget
    facts: str | None = None
    citations: list[dict] | None = None


class StateStore:
    """Single-file JSON store for sessions and tweet drafts.

    One canonical document (sorted keys, compact separators) holds every
    record; writes replace the file atomically, and in-memory state only
    commits after the write succeeds, so a failed persist aborts the turn
    cleanly. Persist-then-load round-trips byte-identically.
    """

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path else None
        self._lock = threading.Lock()
        self._sessions: dict[str, dict] = {}
        self._drafts: dict[str, dict] = {}
        self._counters: dict[str, int] = {"session": 0, "draft": 0}
        if self._path and self._path.is_file():
            document = json.loads(self._path.read_text(encoding="utf-8"))
            if document.get("version") != _STATE_VERSION:
                raise PersistenceError(f"unsupported state version {document.get('version')}")
            self._sessions = document.get("sessions", {})
            self._drafts = document.get("drafts", {})
            self._counters.update(document.get("counters", {}))

    def _document(self, sessions: dict, drafts: dict, counters: dict) -> dict:
        return {
            "version": _STATE_VERSION,
            "counters": counters,
            "sessions": sessions,
            "drafts": drafts,
        }

    @staticmethod
    def encode(document: dict) -> str:
        return json.dumps(document, sort_keys=True, ensure_ascii=False,
                          separators=(",", ":")) + "\n"

    def _write(self, document: dict) -> None:
        if self._path is None:
            return
        try:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            temp = self._path.with_name(self._path.name + ".tmp")
            temp.write_text(self.encode(document), encoding="utf-8")
            os.replace(temp, self._path)
        except OSError as exc:
            raise PersistenceError(f"cannot write state file: {exc}") from exc

    def next_session_id(self) -> str:
        with self._lock:
            self._counters["session"] += 1
            return f"s-{self._counters['session']:04d}"

    def next_draft_id(self) -> str:
        with self._lock:
            self._counters["draft"] += 1
            return f"d-{self._counters['draft']:04d}"

    def load_session(self, session_id: str) -> dict | None:
        with self._lock:
            record = self._sessions.get(session_id)
            return copy.deepcopy(record) if record else None

    def save_session(self, record: dict) -> None:
        with self._lock:
            sessions = dict(self._sessions)
            sessions[record["session_id"]] = record
            self._write(self._document(sessions, self._drafts, self._counters))
            self._sessions = sessions

    def list_sessions(self) -> list[dict]:
        with self._lock:
            return [copy.deepcopy(r) for r in self._sessions.values()]

    def save_draft(self, record: dict) -> None:
        with self._lock:
            drafts = dict(self._drafts)
            drafts[record["draft_id"]] = record
            self._write(self._document(self._sessions, drafts, self._counters))
            self._drafts = drafts

    def list_drafts(self) -> list[dict]:
        with self._lock:
            return [copy.deepcopy(r) for r in self._drafts.values()]


# --- routing ----------------------------------------------------------------


def _parse_route_label(text: str) -> AppTarget | None:
    first_line = text.strip().split("\n", 1)[0]
    normalized = re.sub(r"[^a-z]", "", first_line.lower())
    return _ROUTE_LABELS.get(normalized)


def route_message(
    history: Sequence[HistoryEntry],
    user_message: str,
    gateway: ChatGateway,
    *,
    advisor_phase: advisor_mod.Phase = advisor_mod.Phase.GATHERING,
    advisor_active: bool = False,
) -> AppTarget:
    """Classify which application should take the message.

    One cold call over the last few turns; one retry on an invalid label.
    A session mid trip-gathering falls back to the trip advisor instead of
    Unclear, preserving slot continuity.
    """
    recent = list(history)[-ROUTER_HISTORY_TURNS:]
    rendered = "\n".join(
        f"{'User' if e.role is Role.USER else 'Assistant'}: {e.content}" for e in recent
    ) or "(none)"
    user = render_prompt("router", history=rendered, message=user_message)
    target: AppTarget | None = None
    for attempt in range(2):
        prompt = user if attempt == 0 else user + "\n\nReply with exactly one label from the list."
        result = gateway.complete(
            [
                ChatMessage.system("You route transit-assistant messages to one application."),
                ChatMessage.user(prompt),
            ],
            EXTRACTION_PARAMS,
        )
        target = _parse_route_label(result.text)
        if target is not None:
            break
    if target is None:
        target = AppTarget.UNCLEAR
    if target is AppTarget.UNCLEAR and advisor_active and advisor_phase is advisor_mod.Phase.GATHERING:
        return AppTarget.TRIP_ADVISOR
    return target


def _fallback_route(message: str, advisor_phase: advisor_mod.Phase, advisor_active: bool) -> AppTarget:
    """Keyword routing for when the gateway is down (degraded mode)."""
    lowered = message.lower()
    if advisor_active and advisor_phase is advisor_mod.Phase.GATHERING:
        return AppTarget.TRIP_ADVISOR
    if any(w in lowered for w in ("tweet", "draft", "alert post")):
        return AppTarget.TWEET_WRITER
    if any(w in lowered for w in ("policy", "allowed", "rule", "fare", "bring", "permitted")):
        return AppTarget.POLICY_NAVIGATOR
    if any(w in lowered for w in ("trip", "train", "travel", "go to", "get to", "depart")):
        return AppTarget.TRIP_ADVISOR
    return AppTarget.UNCLEAR


# --- the hub -----------------------------------------------------------------


UNCLEAR_REPLY = (
    "I'm not sure which assistant should take that. You can ask me to plan "
    "a trip, or ask about transit policies."
)
STAFF_ONLY_REPLY = "Tweet drafting is limited to authenticated staff. (code: staff_only)"


class Hub:
    """Shared-memory front door over the three applications."""

    def __init__(
        self,
        feed: gtfs.GtfsFeed,
        alerts: list[AlertEvent],
        gateway: ChatGateway,
        vector_store: VectorStore,
        state_store: StateStore,
        *,
        provider_hashtag: str = tweets.DEFAULT_PROVIDER_HASHTAG,
        retrieval_k: int = 4,
        confidence_threshold: float = policy.DEFAULT_CONFIDENCE_THRESHOLD,
        trip_limit: int = 3,
        agent_budget: int = 8,
        clock: Callable[[], float] = time.time,
    ):
        self.feed = feed
        self.alerts = alerts
        self.gateway = gateway
        self.vector_store = vector_store
        self.state_store = state_store
        self.provider_hashtag = provider_hashtag
        self.retrieval_k = retrieval_k
        self.confidence_threshold = confidence_threshold
        self.trip_limit = trip_limit
        self.agent_budget = agent_budget
        self.clock = clock
        self.queue = tweets.DraftQueue(
            id_factory=state_store.next_draft_id,
            persist=lambda draft: state_store.save_draft(tweets.draft_to_dict(draft)),
        )
        for record in state_store.list_drafts():
            draft = tweets.draft_from_dict(record)
            self.queue._drafts[draft.draft_id] = draft  # preloaded, already persisted
        # Turns within one session are strictly serialized.
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    # -- chat turns -------------------------------------------------------

    def handle_message(self, session_id: str | None, user_message: str, *, staff: bool = False) -> HubReply:
        """Route, dispatch, and persist one chat turn atomically."""
        sid = session_id or self.state_store.next_session_id()
        with self._session_lock(sid):
            record = self.state_store.load_session(sid)
            if record is None:
                now = self.clock()
                session = Session(sid, created_at=now, updated_at=now)
            else:
                session = Session.from_dict(record)

            advisor_active = bool(session.history) and any(
                e.app == AppTarget.TRIP_ADVISOR.value for e in session.history
            )
            try:
                target = route_message(
                    session.history,
                    user_message,
                    self.gateway,
                    advisor_phase=session.advisor_phase,
                    advisor_active=advisor_active,
                )
            except GatewayError:
                logger.warning("routing degraded to keyword rules: gateway unavailable")
                target = _fallback_route(user_message, session.advisor_phase, advisor_active)

            if target is AppTarget.TWEET_WRITER and not staff:
                reply = HubReply(sid, STAFF_ONLY_REPLY, AppTarget.TWEET_WRITER)
                self._append_turn(session, user_message, reply.reply, AppTarget.TWEET_WRITER.value)
            elif target is AppTarget.TRIP_ADVISOR:
                reply = self._dispatch_trip(session, user_message)
            elif target is AppTarget.POLICY_NAVIGATOR:
                reply = self._dispatch_policy(session, user_message)
            elif target is AppTarget.TWEET_WRITER:
                pending = sum(
                    1 for d in self.queue.list_drafts()
                    if d.review_status is tweets.ReviewStatus.PENDING
                )
                text = (
                    f"There are {pending} tweet drafts pending review. Use the drafts "
                    f"endpoints (or the console review queue) to create and decide drafts."
                )
                reply = HubReply(sid, text, AppTarget.TWEET_WRITER)
                self._append_turn(session, user_message, text, AppTarget.TWEET_WRITER.value)
            else:
                reply = HubReply(sid, UNCLEAR_REPLY, AppTarget.UNCLEAR)
                self._append_turn(session, user_message, UNCLEAR_REPLY, AppTarget.UNCLEAR.value)

            session.updated_at = self.clock()
            self.state_store.save_session(session.to_dict())
            return reply

    def _append_turn(self, session: Session, user_message: str, reply: str, app: str) -> None:
        session.history.append(HistoryEntry(Role.USER, user_message, None))
        session.history.append(HistoryEntry(Role.ASSISTANT, reply, app))

    def _dispatch_trip(self, session: Session, user_message: str) -> HubReply:
        phase = session.advisor_phase
        partial = session.advisor_partial
        if phase is advisor_mod.Phase.DONE:
            # A finished plan stays in memory; a new trip message opens a
            # fresh request over the same shared history.
            phase = advisor_mod.Phase.GATHERING
            partial = advisor_mod.TripRequest()
        state = advisor_mod.ConversationState(
            session_id=session.session_id,
            phase=phase,
            history=session.chat_messages(),
            partial=partial,
            last_request=session.advisor_last,
        )
        before = len(state.history)
        state, reply = advisor_mod.advance_conversation(
            state, user_message, self.gateway, self.feed, self.alerts,
            trip_limit=self.trip_limit,
        )
        for message in state.history[before:]:
            app = AppTarget.TRIP_ADVISOR.value if message.role is Role.ASSISTANT else None
            session.history.append(HistoryEntry(message.role, message.content, app))
        session.advisor_phase = state.phase
        session.advisor_partial = state.partial
        session.advisor_last = state.last_request
        return HubReply(session.session_id, reply.text, AppTarget.TRIP_ADVISOR, facts=reply.fact_block)

    def _dispatch_policy(self, session: Session, user_message: str) -> HubReply:
        try:
            answer = policy.answer_policy_query(
                user_message,
                store=self.vector_store,
                gateway=self.gateway,
                k=self.retrieval_k,
                threshold=self.confidence_threshold,
            )
        except (EmptyStore, policy.PolicyError, GatewayError) as exc:
            text = f"Sorry, I can't answer policy questions right now. (code: {type(exc).__name__})"
            self._append_turn(session, user_message, text, AppTarget.POLICY_NAVIGATOR.value)
            return HubReply(session.session_id, text, AppTarget.POLICY_NAVIGATOR)
        text = answer.answer_text
        if answer.confidence_note:
            text = f"{text}\n\n{answer.confidence_note}"
        self._append_turn(session, user_message, text, AppTarget.POLICY_NAVIGATOR.value)
        citations = [
            {
                "doc_id": c.doc_id,
                "chunk_id": c.chunk_id,
                "score": c.score,
                "title": c.title,
                "span": [c.start, c.end],
            }
            for c in answer.citations
        ]
        return HubReply(session.session_id, text, AppTarget.POLICY_NAVIGATOR, citations=citations)

    # -- drafts -----------------------------------------------------------

    def compose_draft(self, alert_id: str, format_mode: tweets.FormatMode) -> tweets.TweetDraft:
        alert = next((a for a in self.alerts if a.alert_id == alert_id), None)
        if alert is None:
            raise UnknownAlert(alert_id)
        draft = tweets.compose_tweet(
            alert,
            format_mode,
            self.feed,
            self.gateway,
            provider_hashtag=self.provider_hashtag,
            budget=self.agent_budget,
            clock=self.clock,
        )
        return self.queue.create(draft)


# --- wiring -------------------------------------------------------------------


def build_gateway(config: AppConfig) -> ChatGateway:
    if config.backend == "scripted":
        if not config.script_path:
            raise ConfigError("scripted backend needs script_path")
        return ScriptedGateway.from_file(config.script_path)
    return RemoteGateway(
        config.base_url,
        config.model,
        api_key=config.api_key,
        timeout_seconds=config.timeout_seconds,
        retries=config.retry_count,
    )


def build_vector_store(config: AppConfig) -> VectorStore:
    store: VectorStore | None = None
    if config.index_path and Path(config.index_path).is_file():
        store = VectorStore.load(config.index_path)
    if store is None:
        store = VectorStore()
    if config.policies_dir and Path(config.policies_dir).is_dir():
        try:
            policy.ingest_policies(config.policies_dir, store)
        except policy.EmptyCorpus:
            logger.warning("no policy documents found in %s", config.policies_dir)
        if config.index_path:
            store.save(config.index_path)
    return store


def build_hub(config: AppConfig, *, clock: Callable[[], float] = time.time) -> Hub:
    """Wire a Hub from configuration: feed, alerts, gateway, stores."""
    feed = gtfs.load_feed(config.gtfs_dir)
    alerts = []
    if config.alerts_path and Path(config.alerts_path).is_file():
        alerts = load_alerts(config.alerts_path)
    gateway = build_gateway(config)
    vector_store = build_vector_store(config)
    state_store = StateStore(config.sessions_path)
    return Hub(
        feed,
        alerts,
        gateway,
        vector_store,
        state_store,
        provider_hashtag=config.provider_hashtag,
        retrieval_k=config.retrieval_k,
        confidence_threshold=config.low_confidence_threshold,
        trip_limit=config.trip_limit,
        agent_budget=config.agent_step_budget,
        clock=clock,
    )
