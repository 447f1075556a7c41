"""Bundled prompt templates.

Templates are plain-text files rendered with string.Template ($name
placeholders). README.md in this directory catalogs each template and the
variables it takes.
"""

from __future__ import annotations

import functools
import string
from importlib import resources


@functools.lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render_prompt(name: str, **values: str) -> str:
    return string.Template(load_prompt(name)).substitute(**values)
