"""Flat key = value configuration with environment overrides for secrets.

Lines look like `key = value`; a line whose first non-blank character is
`#` is a comment (no inline comments: values like hashtags contain `#`).
Unknown keys are an error so typos fail loudly. Secrets (API key, staff
token) can instead come from TRANSITTALK_API_KEY / TRANSITTALK_STAFF_TOKEN.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class AppConfig:
    # gateway
    backend: str = "scripted"             # "scripted" | "remote"
    model: str = "gpt-3.5-turbo"
    base_url: str = "https://api.openai.com/v1"
    api_key: str | None = None
    timeout_seconds: float = 30.0
    retry_count: int = 2
    script_path: str | None = None        # required for the scripted backend
    # data
    gtfs_dir: str = "testdata/mini_feed"
    alerts_path: str | None = "testdata/alerts.jsonl"
    policies_dir: str | None = "testdata/policies"
    index_path: str | None = None         # vector index persistence; None = in-memory
    sessions_path: str = "var/state.json"
    # behavior
    provider_hashtag: str = "#GOtransit"
    low_confidence_threshold: float = 0.15
    retrieval_k: int = 4
    agent_step_budget: int = 8
    trip_limit: int = 3
    # service
    staff_token: str | None = None
    ui_dir: str | None = None

    def __post_init__(self):
        if self.backend not in ("scripted", "remote"):
            raise ConfigError(f"backend must be 'scripted' or 'remote', got {self.backend!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(AppConfig)}
_FLOAT_KEYS = {"timeout_seconds", "low_confidence_threshold"}
_INT_KEYS = {"retry_count", "retrieval_k", "agent_step_budget", "trip_limit"}
_OPTIONAL_KEYS = {"api_key", "script_path", "alerts_path", "policies_dir",
                  "index_path", "staff_token", "ui_dir"}


def parse_config_text(text: str) -> AppConfig:
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in _OPTIONAL_KEYS and value in ("", "none", "null"):
            values[key] = None
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _INT_KEYS:
            values[key] = int(value)
        else:
            values[key] = value
    return AppConfig(**values)  # type: ignore[arg-type]


def load_config(path: str | Path | None) -> AppConfig:
    """Load config from a file (or defaults), then apply env overrides."""
    if path is None:
        config = AppConfig()
    else:
        config = parse_config_text(Path(path).read_text(encoding="utf-8"))
    if os.environ.get("TRANSITTALK_API_KEY"):
        config.api_key = os.environ["TRANSITTALK_API_KEY"]
    if os.environ.get("TRANSITTALK_STAFF_TOKEN"):
        config.staff_token = os.environ["TRANSITTALK_STAFF_TOKEN"]
    return config
