"""Schema-checked JSON extraction through the gateway.

One cold completion is asked for a bare JSON object; if parsing or
validation fails, a single guided retry repeats the request with the
validator's complaint appended. A second failure raises
ExtractionInvalid.
"""

from __future__ import annotations

import json
import re
from typing import Callable

from .gateway import ChatGateway, ChatMessage, CompletionParams, EXTRACTION_PARAMS


class ExtractionInvalid(Exception):
    pass


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n(.*)\n```$", re.DOTALL)


def strip_code_fences(text: str) -> str:
    stripped = text.strip()
    m = _FENCE_RE.match(stripped)
    return m.group(1).strip() if m else stripped


def parse_json_object(text: str) -> dict:
    try:
        obj = json.loads(strip_code_fences(text))
    except ValueError as exc:
        raise ValueError(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    return obj


def call_for_json(
    gateway: ChatGateway,
    system_text: str,
    user_text: str,
    validate: Callable[[dict], dict],
    params: CompletionParams = EXTRACTION_PARAMS,
) -> dict:
    """Request a JSON object and validate it, with one guided retry.

    `validate` receives the parsed object and returns the (possibly
    normalized) result; it raises ValueError with a human-readable
    complaint to trigger the retry.
    """
    prompt_user = user_text
    complaint = ""
    for attempt in range(2):
        if attempt:
            prompt_user = f"{user_text}\n\nYour previous reply was invalid: {complaint}"
        result = gateway.complete(
            [ChatMessage.system(system_text), ChatMessage.user(prompt_user)], params
        )
        try:
            return validate(parse_json_object(result.text))
        except ValueError as exc:
            complaint = str(exc)
    raise ExtractionInvalid(complaint)
