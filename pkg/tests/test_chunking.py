from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hysem.chunking import (
    EXTRACTION_SPEC,
    INDEX_SPEC,
    ChunkSpec,
    WhitespaceTokenizer,
    chunk_documents,
    chunk_text,
    expected_chunk_count,
    window_ranges,
)


def words(n):
    return " ".join(f"w{i}" for i in range(n))


def test_derived_case_100_40_10():
    # Windows start at 0, 30, 60: [0,40), [30,70), [60,100).
    spec = ChunkSpec(40, 10)
    assert window_ranges(100, spec) == [(0, 40), (30, 70), (60, 100)]
    chunks = chunk_text(words(100), spec)
    assert len(chunks) == 3
    assert chunks[1].split()[0] == "w30" and chunks[2].split()[-1] == "w99"


def test_short_text_returned_verbatim():
    text = "  keeps   odd\nspacing "
    assert chunk_text(text, ChunkSpec(10, 2)) == [text]
    assert chunk_text("", INDEX_SPEC) == []
    assert chunk_text(None, INDEX_SPEC) == []


def test_defaults():
    assert (INDEX_SPEC.max_tokens, INDEX_SPEC.overlap) == (7000, 200)
    assert (EXTRACTION_SPEC.max_tokens, EXTRACTION_SPEC.overlap) == (8000, 500)


@pytest.mark.parametrize("max_tokens,overlap", [(0, 0), (5, 5), (5, -1)])
def test_chunk_spec_validation(max_tokens, overlap):
    with pytest.raises(ValueError):
        ChunkSpec(max_tokens, overlap)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2000), st.integers(1, 300), st.data())
def test_window_arithmetic(n, max_tokens, data):
    overlap = data.draw(st.integers(0, max_tokens - 1))
    spec = ChunkSpec(max_tokens, overlap)
    ranges = window_ranges(n, spec)
    if n == 0:
        expected = 0
    elif n <= max_tokens:
        expected = 1
    else:
        expected = math.ceil((n - max_tokens) / (max_tokens - overlap)) + 1
    assert len(ranges) == expected == expected_chunk_count(n, spec)
    for (s1, e1), (s2, e2) in zip(ranges, ranges[1:]):
        assert e1 - s2 == overlap
        assert e1 - s1 == max_tokens
    if ranges:
        assert ranges[0][0] == 0 and ranges[-1][1] == n


def test_chunk_tokens_cover_text():
    spec = ChunkSpec(7, 3)
    tokens = words(30).split()
    chunks = chunk_text(" ".join(tokens), spec)
    rebuilt = chunks[0].split()
    for c in chunks[1:]:
        rebuilt += c.split()[spec.overlap:]
    assert rebuilt[: len(tokens)] == tokens


class BrokenTokenizer(WhitespaceTokenizer):
    def encode(self, text):
        raise RuntimeError("boom")


def test_tokenizer_failure_falls_back_to_whole_text(caplog):
    assert chunk_text(words(50), ChunkSpec(10, 1), BrokenTokenizer()) == [words(50)]
    assert "Error chunking text" in caplog.text


def test_chunk_documents_indices():
    chunks = chunk_documents([words(25), "", words(3)], ChunkSpec(10, 0))
    assert [(c.doc_idx, c.chunk_idx) for c in chunks] == [(0, 0), (0, 1), (0, 2), (2, 0)]
