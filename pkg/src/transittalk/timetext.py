"""Clock-time parsing and formatting shared by the pipelines.

All times are integer seconds past midnight. Values above 86400 are legal
and denote service running past midnight on the same service day.
"""

from __future__ import annotations

import re

SECONDS_PER_DAY = 86400

# Vague daypart words resolve through this fixed table; anything outside
# it is treated as unparseable so callers can ask a clarifying question.
# Relative day words ("tomorrow") carry no clock information and are
# ignored: the schedule fixture is date-less.
NATURAL_TIME_TABLE = {
    "morning": 8 * 3600,
    "noon": 12 * 3600,
    "evening": 18 * 3600,
}

_GTFS_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2}))?$")
_CLOCK_RE = re.compile(r"\b(\d{1,2}):(\d{2})(?:\s*(am|pm))?\b", re.IGNORECASE)
_HOUR_AMPM_RE = re.compile(r"\b(\d{1,2})\s*(am|pm)\b", re.IGNORECASE)
# A bare hour counts only with an "at" cue ("at 8"); it reads as 24-hour
# clock, so "at 8" is 08:00 and "at 14" is 14:00.
_AT_HOUR_RE = re.compile(r"\bat\s+(\d{1,2})\b(?!\s*:)", re.IGNORECASE)


def parse_gtfs_time(value: str) -> int | None:
    """Parse H:MM[:SS]; hours may exceed 23 for post-midnight service."""
    m = _GTFS_TIME_RE.match(value.strip())
    if not m:
        return None
    hours, minutes, seconds = int(m[1]), int(m[2]), int(m[3] or 0)
    if minutes > 59 or seconds > 59:
        return None
    return hours * 3600 + minutes * 60 + seconds


def format_clock(seconds: int) -> str:
    """Render HH:MM; hours above 23 are kept as-is (e.g. "25:10")."""
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}"


def _ampm_hour(hour: int, meridiem: str) -> int | None:
    if not 1 <= hour <= 12:
        return None
    if meridiem.lower() == "am":
        return 0 if hour == 12 else hour
    return 12 if hour == 12 else hour + 12


def parse_clock_text(value: str) -> int | None:
    """Parse one time expression: "08:00", "8:30 pm", "8am", "morning".

    Returns seconds past midnight, or None when the text is not a single
    recognized time expression.
    """
    text = value.strip().lower()
    if not text:
        return None
    if text in NATURAL_TIME_TABLE:
        return NATURAL_TIME_TABLE[text]
    m = re.fullmatch(r"(\d{1,2}):(\d{2})(?::(\d{2}))?\s*(am|pm)?", text)
    if m:
        hours, minutes = int(m[1]), int(m[2])
        seconds = int(m[3] or 0)
        if minutes > 59 or seconds > 59:
            return None
        if m[4]:
            hours = _ampm_hour(hours, m[4])
            if hours is None:
                return None
        return hours * 3600 + minutes * 60 + seconds
    m = re.fullmatch(r"(\d{1,2})\s*(am|pm)", text)
    if m:
        hours = _ampm_hour(int(m[1]), m[2])
        if hours is None:
            return None
        return hours * 3600
    return None


def find_time_mentions(text: str) -> dict[int, str]:
    """Scan free text for time expressions.

    Returns {seconds: "stated" | "inferred"}: "stated" for explicit clock
    forms, "inferred" for daypart words from the resolution table. An
    explicit mention wins when both map to the same instant.
    """
    mentions: dict[int, str] = {}
    lowered = text.lower()
    for word, seconds in NATURAL_TIME_TABLE.items():
        if re.search(rf"\b{word}\b", lowered):
            mentions.setdefault(seconds, "inferred")
    for m in _CLOCK_RE.finditer(text):
        hours, minutes = int(m[1]), int(m[2])
        if minutes > 59:
            continue
        if m[3]:
            resolved = _ampm_hour(hours, m[3])
            if resolved is None:
                continue
            hours = resolved
        mentions[hours * 3600 + minutes * 60] = "stated"
    for m in _HOUR_AMPM_RE.finditer(text):
        hours = _ampm_hour(int(m[1]), m[2])
        if hours is not None:
            mentions[hours * 3600] = "stated"
    for m in _AT_HOUR_RE.finditer(text):
        hours = int(m[1])
        if 0 <= hours <= 23:
            mentions[hours * 3600] = "stated"
    return mentions
