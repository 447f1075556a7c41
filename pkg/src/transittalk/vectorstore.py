"""Exact-scan vector store with a deterministic hashing embedder.

Documents are split into overlapping chunks, embedded as fixed-length
hashed bag-of-words vectors, and searched by brute-force cosine
similarity. Policy corpora are small, so exact scan beats approximate
indexing on both correctness and simplicity; the embedder interface
admits a learned backend later.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DIM = 256
DEFAULT_MAX_CHUNK_CHARS = 1200
DEFAULT_OVERLAP_CHARS = 150
DEFAULT_K = 4

_MAGIC = b"TTVS"
_FORMAT_VERSION = 1


class VectorStoreError(Exception):
    pass


class EmptyDocument(VectorStoreError):
    pass


class EmptyStore(VectorStoreError):
    pass


@dataclass(frozen=True)
class PolicyChunk:
    """One retrievable segment of a source document."""

    chunk_id: str
    doc_id: str
    title: str
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class ScoredChunk:
    chunk: PolicyChunk
    score: float


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def is_empty_embedding(vector: np.ndarray) -> bool:
    return not np.any(vector)


class HashingEmbedder:
    """Deterministic bag-of-words embedder.

    Tokens hash to one of `dim` buckets (keyed blake2b, stable across
    processes), term counts accumulate, and the vector is L2-normalized.
    Text with no tokens embeds to the zero vector, which the store
    excludes from search.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vector[self._bucket(token)] += 1.0
        norm = float(np.linalg.norm(vector))
        if norm > 0:
            vector /= norm
        return vector


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0.0 when either is zero."""
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


_PARAGRAPH_BREAK = re.compile(r"\n\s*\n")
_SENTENCE_BREAK = re.compile(r"[.!?]\s|\n")


def chunk_document(
    doc_id: str,
    title: str,
    text: str,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> list[PolicyChunk]:
    """Split a document into overlapping chunks covering the full text.

    Split points prefer paragraph boundaries, then sentence boundaries,
    then a hard cut at the size limit. Consecutive chunks overlap by
    roughly `overlap_chars`; the union of chunk spans is [0, len(text)).
    """
    if max_chunk_chars < 1:
        raise ValueError("max_chunk_chars must be positive")
    if not 0 <= overlap_chars < max_chunk_chars:
        raise ValueError("overlap_chars must be non-negative and below max_chunk_chars")
    if not text.strip():
        raise EmptyDocument(f"document {doc_id!r} is empty")

    chunks: list[PolicyChunk] = []
    position = 0
    sequence = 0
    while position < len(text):
        end = min(position + max_chunk_chars, len(text))
        if end < len(text):
            window = text[position:end]
            cut = None
            paragraph_ends = [m.end() for m in _PARAGRAPH_BREAK.finditer(window)]
            if paragraph_ends and paragraph_ends[-1] > 0:
                cut = paragraph_ends[-1]
            else:
                sentence_ends = [m.end() for m in _SENTENCE_BREAK.finditer(window)]
                if sentence_ends and sentence_ends[-1] > 0:
                    cut = sentence_ends[-1]
            if cut:
                end = position + cut
        chunks.append(
            PolicyChunk(
                chunk_id=f"{doc_id}#{sequence:04d}",
                doc_id=doc_id,
                title=title,
                text=text[position:end],
                start=position,
                end=end,
            )
        )
        sequence += 1
        if end >= len(text):
            break
        position = max(position + 1, end - overlap_chars)
    return chunks


class VectorStore:
    """Chunk index with exact cosine-similarity search.

    Searches run concurrently; ingestion takes the store lock. Contents
    persist to a single versioned binary index file (little-endian
    float64 vectors) reloaded at startup.
    """

    def __init__(self, embedder: HashingEmbedder | None = None):
        self.embedder = embedder or HashingEmbedder()
        self._chunks: list[PolicyChunk] = []
        self._vectors: list[np.ndarray] = []
        self._fingerprints: dict[str, str] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunks(self) -> list[PolicyChunk]:
        return list(self._chunks)

    def has_fingerprint(self, doc_id: str, fingerprint: str) -> bool:
        return self._fingerprints.get(doc_id) == fingerprint

    def get_chunk(self, chunk_id: str) -> PolicyChunk | None:
        for chunk in self._chunks:
            if chunk.chunk_id == chunk_id:
                return chunk
        return None

    def index_document(
        self,
        doc_id: str,
        title: str,
        text: str,
        *,
        fingerprint: str | None = None,
        max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
        overlap_chars: int = DEFAULT_OVERLAP_CHARS,
    ) -> list[PolicyChunk]:
        """Chunk, embed, and (re)index one document, replacing prior chunks."""
        chunks = chunk_document(doc_id, title, text, max_chunk_chars, overlap_chars)
        vectors = [self.embedder.embed(chunk.text) for chunk in chunks]
        with self._lock:
            keep = [i for i, c in enumerate(self._chunks) if c.doc_id != doc_id]
            self._chunks = [self._chunks[i] for i in keep] + chunks
            self._vectors = [self._vectors[i] for i in keep] + vectors
            if fingerprint is not None:
                self._fingerprints[doc_id] = fingerprint
        return chunks

    def add_chunk(self, chunk: PolicyChunk) -> None:
        with self._lock:
            self._chunks.append(chunk)
            self._vectors.append(self.embedder.embed(chunk.text))

    def search(self, query: str, k: int) -> list[ScoredChunk]:
        """Exact top-k by cosine similarity, ties broken by chunk_id."""
        if k < 1:
            raise ValueError("k must be positive")
        if not self._chunks:
            raise EmptyStore("no chunks indexed")
        query_vector = self.embedder.embed(query)
        scored = []
        for chunk, vector in zip(self._chunks, self._vectors):
            if is_empty_embedding(vector):
                continue
            scored.append(ScoredChunk(chunk, cosine_similarity(query_vector, vector)))
        scored.sort(key=lambda sc: (-sc.score, sc.chunk.chunk_id))
        return scored[:k]

    # --- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        with self._lock:
            blob = bytearray()
            blob += _MAGIC
            blob += struct.pack("<HIII", _FORMAT_VERSION, self.embedder.dim,
                                len(self._chunks), len(self._fingerprints))
            for doc_id, fingerprint in sorted(self._fingerprints.items()):
                blob += _pack_str(doc_id) + _pack_str(fingerprint)
            for chunk, vector in zip(self._chunks, self._vectors):
                blob += _pack_str(chunk.chunk_id)
                blob += _pack_str(chunk.doc_id)
                blob += _pack_str(chunk.title)
                blob += _pack_str(chunk.text)
                blob += struct.pack("<QQ", chunk.start, chunk.end)
                blob += vector.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(blob))
        logger.info("saved vector index: %d chunks to %s", len(self._chunks), path)

    @classmethod
    def load(cls, path: str | Path, embedder: HashingEmbedder | None = None) -> "VectorStore":
        data = Path(path).read_bytes()
        if data[:4] != _MAGIC:
            raise VectorStoreError(f"{path}: not a vector index file")
        version, dim, chunk_count, doc_count = struct.unpack_from("<HIII", data, 4)
        if version != _FORMAT_VERSION:
            raise VectorStoreError(f"{path}: unsupported index version {version}")
        if embedder is not None and embedder.dim != dim:
            raise VectorStoreError(f"{path}: index dim {dim} != embedder dim {embedder.dim}")
        store = cls(embedder or HashingEmbedder(dim))
        offset = 18
        for _ in range(doc_count):
            doc_id, offset = _unpack_str(data, offset)
            fingerprint, offset = _unpack_str(data, offset)
            store._fingerprints[doc_id] = fingerprint
        for _ in range(chunk_count):
            chunk_id, offset = _unpack_str(data, offset)
            doc_id, offset = _unpack_str(data, offset)
            title, offset = _unpack_str(data, offset)
            text, offset = _unpack_str(data, offset)
            start, end = struct.unpack_from("<QQ", data, offset)
            offset += 16
            vector = np.frombuffer(data, dtype="<f8", count=dim, offset=offset).astype(np.float64)
            offset += 8 * dim
            store._chunks.append(PolicyChunk(chunk_id, doc_id, title, text, start, end))
            store._vectors.append(vector)
        return store


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(data: bytes, offset: int) -> tuple[str, int]:
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    return data[offset : offset + length].decode("utf-8"), offset + length
