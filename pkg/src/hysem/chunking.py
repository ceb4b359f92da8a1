"""Overlapping token-window chunking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

logger = logging.getLogger(__name__)


class Tokenizer(Protocol):
    def encode(self, text: str) -> list: ...

    def decode(self, tokens: Sequence) -> str: ...


class WhitespaceTokenizer:
    """Tokens are maximal runs of non-whitespace; decode joins with one space."""

    def encode(self, text: str) -> list[str]:
        return text.split()

    def decode(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)


@dataclass(frozen=True)
class ChunkSpec:
    max_tokens: int = 7000
    overlap: int = 200

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if not 0 <= self.overlap < self.max_tokens:
            raise ValueError("overlap must satisfy 0 <= overlap < max_tokens")


INDEX_SPEC = ChunkSpec(7000, 200)
EXTRACTION_SPEC = ChunkSpec(8000, 500)


@dataclass(frozen=True)
class Chunk:
    doc_idx: int
    chunk_idx: int
    text: str


def window_ranges(n_tokens: int, spec: ChunkSpec) -> list[tuple[int, int]]:
    """Half-open token ranges produced for a text of ``n_tokens`` tokens."""
    if n_tokens <= spec.max_tokens:
        return [(0, n_tokens)] if n_tokens else []
    step = spec.max_tokens - spec.overlap
    ranges = []
    start = 0
    while start < n_tokens:
        end = min(start + spec.max_tokens, n_tokens)
        ranges.append((start, end))
        if end >= n_tokens:
            break
        start += step
    return ranges


def expected_chunk_count(n_tokens: int, spec: ChunkSpec) -> int:
    if n_tokens == 0:
        return 0
    if n_tokens <= spec.max_tokens:
        return 1
    return math.ceil((n_tokens - spec.max_tokens) / (spec.max_tokens - spec.overlap)) + 1


def chunk_text(
    text: str | None, spec: ChunkSpec = INDEX_SPEC, tok: Tokenizer | None = None
) -> list[str]:
    """Split ``text`` into overlapping windows of at most ``spec.max_tokens`` tokens.

    Text that already fits is returned verbatim as a single chunk. If the
    tokenizer fails the whole text is returned as one chunk.
    """
    if not text:
        return []
    tok = tok or WhitespaceTokenizer()
    try:
        tokens = tok.encode(str(text))
        if len(tokens) <= spec.max_tokens:
            return [text]
        return [tok.decode(tokens[s:e]) for s, e in window_ranges(len(tokens), spec)]
    except Exception as exc:
        logger.warning("Error chunking text: %s", exc)
        return [text]


def chunk_documents(
    texts: Sequence[str], spec: ChunkSpec = INDEX_SPEC, tok: Tokenizer | None = None
) -> list[Chunk]:
    return [
        Chunk(doc_idx, chunk_idx, piece)
        for doc_idx, text in enumerate(texts)
        for chunk_idx, piece in enumerate(chunk_text(text, spec, tok))
    ]
