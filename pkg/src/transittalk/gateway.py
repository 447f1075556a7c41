"""Chat-completion gateway: one interface, two backends.

The remote backend talks to an OpenAI-compatible chat-completions HTTP
endpoint with bounded timeout and retry. The scripted backend replays
canned responses from transcript files so every pipeline behavior can be
tested deterministically with zero network access.

Transcript file format: entries separated by lines containing exactly
`---`. An entry may begin with an `@trigger: <regex>` header line; when
that entry is consumed, the regex must match the most recent user or tool
message, which guards golden scripts against call-order drift.

Privacy contract: prompt and completion content is never logged at
default verbosity. Only counts and metadata appear below DEBUG.
"""

from __future__ import annotations

import enum
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 512
DEFAULT_RETRIES = 2
_BACKOFF_BASE_SECONDS = 0.5


class GatewayError(Exception):
    """Base class for completion failures."""


class GatewayTimeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    def __init__(self, consumed: int):
        super().__init__(f"scripted backend exhausted after {consumed} responses")
        self.consumed = consumed


class TriggerMismatch(GatewayError):
    def __init__(self, trigger: str, message: str):
        super().__init__(
            f"scripted response expected trigger {trigger!r} but the last "
            f"user/tool message does not match"
        )
        self.trigger = trigger
        self.message = message


class Role(enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    @classmethod
    def system(cls, content: str) -> "ChatMessage":
        return cls(Role.SYSTEM, content)

    @classmethod
    def user(cls, content: str) -> "ChatMessage":
        return cls(Role.USER, content)

    @classmethod
    def assistant(cls, content: str) -> "ChatMessage":
        return cls(Role.ASSISTANT, content)


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if len(self.stop_sequences) > 4:
            raise ValueError("at most 4 stop sequences")


# Strict-format calls (extraction, validation, routing) run cold; only
# open-format tweet generation runs warm.
EXTRACTION_PARAMS = CompletionParams(temperature=0.0)
CREATIVE_PARAMS = CompletionParams(temperature=0.7)


class FinishReason(enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: FinishReason
    usage: TokenUsage = field(default_factory=TokenUsage)


class ChatGateway(ABC):
    """Provider-agnostic chat-completion boundary."""

    @abstractmethod
    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> CompletionResult:
        """Run one chat completion. `messages` must be non-empty."""


@dataclass(frozen=True)
class ScriptEntry:
    text: str
    trigger: str | None = None


def parse_transcript(text: str) -> list[ScriptEntry]:
    """Parse transcript text into script entries.

    Blocks are separated by lines that are exactly `---`; entry text is the
    block with surrounding blank lines stripped (interior lines preserved).
    """
    entries: list[ScriptEntry] = []
    for block in re.split(r"(?m)^---$", text):
        lines = block.split("\n")
        trigger = None
        while lines and not lines[0].strip():
            lines.pop(0)
        if lines and lines[0].startswith("@trigger:"):
            trigger = lines[0][len("@trigger:") :].strip()
            lines.pop(0)
        body = "\n".join(lines).strip()
        if body or trigger:
            entries.append(ScriptEntry(body, trigger))
    return entries


def load_transcript(path: str | Path) -> list[ScriptEntry]:
    return parse_transcript(Path(path).read_text(encoding="utf-8"))


class ScriptedGateway(ChatGateway):
    """Replay scripted responses in order, one per complete() call.

    A single cursor serializes consumption; the backend is intended for
    single-flight tests and identical scripts with identical call
    sequences yield identical results.
    """

    def __init__(self, entries: Sequence[ScriptEntry | str]):
        self._entries = [
            entry if isinstance(entry, ScriptEntry) else ScriptEntry(entry) for entry in entries
        ]
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedGateway":
        return cls(load_transcript(path))

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._entries) - self._cursor

    def reset(self) -> None:
        with self._lock:
            self._cursor = 0

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> CompletionResult:
        if not messages:
            raise ValueError("messages must be non-empty")
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ScriptExhausted(self._cursor)
            entry = self._entries[self._cursor]
            if entry.trigger is not None:
                last = _last_user_or_tool(messages)
                if not re.search(entry.trigger, last):
                    raise TriggerMismatch(entry.trigger, last)
            self._cursor += 1
        logger.debug("scripted completion %d/%d", self._cursor, len(self._entries))
        return CompletionResult(entry.text, FinishReason.STOP, TokenUsage())


def _last_user_or_tool(messages: Sequence[ChatMessage]) -> str:
    for message in reversed(messages):
        if message.role in (Role.USER, Role.TOOL):
            return message.content
    return ""


class RemoteGateway(ChatGateway):
    """OpenAI-compatible chat-completions client over HTTP.

    Transient failures (timeouts, HTTP 429 and 5xx) are retried with
    exponential backoff, at most `retries` extra attempts.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_seconds: float = 30.0,
        retries: int = DEFAULT_RETRIES,
        client=None,
        sleep=time.sleep,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self._sleep = sleep
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout_seconds, headers=headers)

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> CompletionResult:
        import httpx

        if not messages:
            raise ValueError("messages must be non-empty")
        payload: dict = {
            "model": self.model,
            "messages": [
                # The textual tool loop carries observations as user turns;
                # a bare "tool" role needs vendor call ids we do not use.
                {"role": "user" if m.role is Role.TOOL else m.role.value, "content": m.content}
                for m in messages
            ],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)

        last_error: GatewayError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(_BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
            try:
                response = self._client.post(f"{self.base_url}/chat/completions", json=payload)
            except httpx.TimeoutException:
                last_error = GatewayTimeout("chat completion timed out")
                continue
            if response.status_code == 429:
                last_error = RateLimited("rate limited by completion endpoint")
                continue
            if response.status_code >= 500:
                last_error = GatewayError(f"server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise GatewayError(f"completion request rejected: HTTP {response.status_code}")
            logger.debug("remote completion ok (%d messages, attempt %d)", len(messages), attempt + 1)
            return self._parse_response(response.json())
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse_response(body: dict) -> CompletionResult:
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
            reason = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from None
        finish = {"stop": FinishReason.STOP, "length": FinishReason.LENGTH}.get(
            reason, FinishReason.ERROR
        )
        usage = body.get("usage") or {}
        return CompletionResult(
            text,
            finish,
            TokenUsage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            ),
        )
