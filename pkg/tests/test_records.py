from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hysem.records import (
    EnrichmentEntry,
    MetadataRecord,
    coerce_count,
    enrich,
    enrich_all,
    load_records,
    merge_and_deduplicate,
    save_records,
)


def oracle_dedup(lists):
    """Group by normalized DOI (keep first), then by normalized title among DOI-less records."""
    flat = [r for lst in lists for r in lst]
    flat = sorted(flat, key=lambda r: (r.doi.lower().strip(), r.title.lower().strip()))
    out, dois, titles = [], [], []
    for r in flat:
        d, t = r.doi.lower().strip(), r.title.lower().strip()
        if d:
            if d not in dois:
                dois.append(d)
                out.append(r)
        elif t not in titles:
            titles.append(t)
            out.append(r)
    return out


_doi = st.sampled_from(["", " ", "10.1/a", "10.1/A", " 10.1/a", "10.2/b", "10.3/c"])
_title = st.sampled_from(["", "Alpha", "alpha", " ALPHA ", "Beta", "beta gamma", "Beta  Gamma"])
_record = st.builds(MetadataRecord, doi=_doi, title=_title, journal=st.sampled_from(["J1", "J2", "J3"]))
record_lists = st.lists(st.lists(_record, max_size=20), max_size=4)


def test_example_keeps_one_doi_and_one_title_representative():
    recs = [
        MetadataRecord(doi="", title="Alpha"),
        MetadataRecord(doi="", title="alpha"),
        MetadataRecord(doi="10.1/y", title="Alpha"),
    ]
    out = merge_and_deduplicate([recs])
    assert [(r.doi, r.title) for r in out] == [("", "Alpha"), ("10.1/y", "Alpha")]


def test_first_source_wins_on_doi_collision():
    a = MetadataRecord(doi="10.5/X", title="T", journal="first")
    b = MetadataRecord(doi="10.5/x", title="T", journal="second")
    assert merge_and_deduplicate([[a], [b]])[0].journal == "first"


def test_empty_input_returns_empty(caplog):
    assert merge_and_deduplicate([]) == []
    assert "No records" in caplog.text


@settings(max_examples=200, deadline=None)
@given(record_lists)
def test_dedup_matches_oracle(lists):
    assert merge_and_deduplicate(lists) == oracle_dedup(lists)


@settings(max_examples=200, deadline=None)
@given(record_lists)
def test_dedup_idempotent_and_unique(lists):
    once = merge_and_deduplicate(lists)
    assert merge_and_deduplicate([once]) == once
    dois = [r.doi.lower().strip() for r in once if r.doi.strip()]
    titles = [r.title.lower().strip() for r in once if not r.doi.strip()]
    assert len(dois) == len(set(dois))
    assert len(titles) == len(set(titles))


def test_enrich_fills_gaps_without_overwriting():
    rec = MetadataRecord(doi="10.1/a", abstract="kept", item_type="N/A", citation_count=3)
    entry = EnrichmentEntry(doi="10.1/A", abstract="new", item_type="journal-article", citation_count=9,
                            open_alex_id="W1", is_retracted=False)
    out = enrich(rec, entry)
    assert out.abstract == "kept"
    assert out.item_type == "journal-article"
    assert out.citation_count == 9
    assert out.open_alex_id == "W1" and out.is_retracted is False
    assert rec.item_type == "N/A"  # input untouched


def test_enrich_item_type_placeholder_is_exact():
    rec = MetadataRecord(doi="d", item_type="book")
    assert enrich(rec, EnrichmentEntry(doi="d", item_type="article")).item_type == "book"
    blank = MetadataRecord(doi="d", item_type="  ")
    assert enrich(blank, EnrichmentEntry(doi="d", item_type="article")).item_type == "article"


def test_enrich_keeps_count_and_topic_when_entry_lacks_them():
    rec = MetadataRecord(doi="d", citation_count=4, primary_topic={"id": 1})
    out = enrich(rec, EnrichmentEntry(doi="d"))
    assert out.citation_count == 4 and out.primary_topic == {"id": 1}


def test_enrich_rejects_doi_mismatch():
    with pytest.raises(ValueError):
        enrich(MetadataRecord(doi="a"), EnrichmentEntry(doi="b"))


def test_enrich_all_matches_by_normalized_doi_and_rejects_duplicates():
    recs = [MetadataRecord(doi="10.1/A"), MetadataRecord(doi=""), MetadataRecord(doi="10.2/b")]
    out = enrich_all(recs, [EnrichmentEntry(doi=" 10.1/a", abstract="x")])
    assert [r.abstract for r in out] == ["x", "", ""]
    with pytest.raises(ValueError):
        enrich_all(recs, [EnrichmentEntry(doi="d"), EnrichmentEntry(doi="D")])


@pytest.mark.parametrize("value,expected", [(None, 0), ("", 0), (float("nan"), 0), ("12", 12), (7.0, 7)])
def test_coerce_count(value, expected):
    assert coerce_count(value) == expected


def test_coerce_count_rejects_negative():
    with pytest.raises(ValueError):
        coerce_count(-1)


def test_jsonl_round_trip(tmp_path):
    recs = [MetadataRecord(doi="10.1/é", title="Ünïcode", extracted_fields={"A": ["x"]}, is_published=True)]
    save_records(tmp_path / "r.jsonl", recs)
    assert load_records(tmp_path / "r.jsonl") == recs


def test_null_string_fields_load_as_empty():
    rec = MetadataRecord.from_dict({"doi": None, "title": "t", "citation_count": None, "bogus": 1})
    assert rec.doi == "" and rec.citation_count == 0
