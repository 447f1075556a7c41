"""Policy Q&A: ingest policy documents, retrieve, and answer grounded.

Any free-text question gets an answer: either one generated strictly from
the retrieved chunks, or an explicit low-confidence note when nothing in
the corpus scores above the threshold. Answers always cite the chunks
they drew on, at document + span granularity.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

from .gateway import ChatGateway, ChatMessage, EXTRACTION_PARAMS
from .prompts import render_prompt
from .vectorstore import (
    DEFAULT_K,
    DEFAULT_MAX_CHUNK_CHARS,
    DEFAULT_OVERLAP_CHARS,
    EmptyStore,
    VectorStore,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_THRESHOLD = 0.15

LOW_CONFIDENCE_NOTE = (
    "Note: none of the indexed policy documents match this question well; "
    "the citations below are the closest passages, but please verify with "
    "the agency."
)

_POLICY_SUFFIXES = {".txt", ".md"}


class PolicyError(Exception):
    pass


class EmptyCorpus(PolicyError):
    pass


class EmptyQuery(PolicyError):
    pass


@dataclass(frozen=True)
class Citation:
    doc_id: str
    chunk_id: str
    score: float
    title: str
    start: int
    end: int


@dataclass(frozen=True)
class PolicyAnswer:
    answer_text: str
    citations: list[Citation]
    raw_segments: list[str] | None
    confidence_note: str | None


@dataclass(frozen=True)
class IngestReport:
    documents: int
    chunks: int
    skipped_unchanged: int
    failures: list[tuple[str, str]]


def _doc_title(text: str, fallback: str) -> str:
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            return stripped.lstrip("#").strip() or fallback
        if stripped:
            return stripped if len(stripped) <= 80 else fallback
    return fallback


def ingest_policies(
    directory: str | Path,
    store: VectorStore,
    *,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> IngestReport:
    """Chunk and embed every text/Markdown file in the directory.

    Filenames are document ids. Re-ingesting an unchanged file is a no-op
    (content-hash check). Unreadable files are reported and skipped while
    the rest proceed.
    """
    root = Path(directory)
    files = sorted(
        p for p in root.iterdir() if p.is_file() and p.suffix.lower() in _POLICY_SUFFIXES
    ) if root.is_dir() else []
    if not files:
        raise EmptyCorpus(f"no policy documents in {directory}")

    documents = 0
    chunks = 0
    skipped = 0
    failures: list[tuple[str, str]] = []
    for path in files:
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            failures.append((path.name, str(exc)))
            continue
        fingerprint = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if store.has_fingerprint(path.name, fingerprint):
            skipped += 1
            continue
        added = store.index_document(
            path.name,
            _doc_title(text, path.stem),
            text,
            fingerprint=fingerprint,
            max_chunk_chars=max_chunk_chars,
            overlap_chars=overlap_chars,
        )
        documents += 1
        chunks += len(added)
    logger.info(
        "policy ingest: %d docs indexed, %d chunks, %d unchanged, %d failures",
        documents, chunks, skipped, len(failures),
    )
    return IngestReport(documents, chunks, skipped, failures)


def answer_policy_query(
    query: str,
    *,
    store: VectorStore,
    gateway: ChatGateway,
    k: int = DEFAULT_K,
    include_sources: bool = False,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> PolicyAnswer:
    """Retrieve top-k chunks and generate an answer grounded on them only.

    When the best retrieval score falls below the threshold the answer
    carries a low-confidence note but still cites the closest matches.
    """
    if not query.strip():
        raise EmptyQuery("query is empty")
    if len(store) == 0:
        raise EmptyStore("no policy chunks indexed")

    hits = store.search(query, k)
    chunk_block = "\n\n".join(
        f"[{hit.chunk.doc_id} :: {hit.chunk.title}]\n{hit.chunk.text.strip()}" for hit in hits
    )
    user = render_prompt("policy_answer", chunks=chunk_block, query=query)
    result = gateway.complete(
        [ChatMessage.system("You answer riders' transit policy questions."), ChatMessage.user(user)],
        EXTRACTION_PARAMS,
    )

    confidence_note = LOW_CONFIDENCE_NOTE if hits[0].score < threshold else None
    citations = [
        Citation(
            doc_id=hit.chunk.doc_id,
            chunk_id=hit.chunk.chunk_id,
            score=hit.score,
            title=hit.chunk.title,
            start=hit.chunk.start,
            end=hit.chunk.end,
        )
        for hit in hits
    ]
    return PolicyAnswer(
        answer_text=result.text.strip(),
        citations=citations,
        raw_segments=[hit.chunk.text for hit in hits] if include_sources else None,
        confidence_note=confidence_note,
    )
