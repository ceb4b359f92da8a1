"""Scholarly record model, multi-source merge, deduplication and enrichment."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .jsonio import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

ITEM_TYPE_PLACEHOLDERS = frozenset({"", "N/A"})


@dataclass
class MetadataRecord:
    doi: str = ""
    title: str = ""
    authors: str = ""
    date: str = ""
    journal: str = ""
    volume: str = ""
    issue: str = ""
    pages: str = ""
    abstract: str = ""
    item_type: str = ""
    citation_count: int = 0
    primary_topic: Any = None
    is_published: bool | None = None
    is_retracted: bool | None = None
    open_alex_id: str = ""
    pdf_path: str | None = None
    zotero_key: str = ""
    in_text_citation: str = ""
    full_citation: str = ""
    full_text: str = ""
    tables_json: str = "[]"
    equations_json: str = "[]"
    token_count: int = 0
    error: str | None = None
    extracted_fields: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.citation_count = coerce_count(self.citation_count)
        self.token_count = coerce_count(self.token_count)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MetadataRecord:
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                continue
            # JSON null on a string column means "missing", i.e. empty.
            if value is None and key in _STRING_FIELDS:
                value = ""
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_STRING_FIELDS = frozenset(
    f.name for f in dataclasses.fields(MetadataRecord) if f.type == "str"
)


@dataclass(frozen=True)
class EnrichmentEntry:
    doi: str
    abstract: str | None = None
    item_type: str | None = None
    citation_count: int | None = None
    primary_topic: Any = None
    is_published: bool | None = None
    is_retracted: bool | None = None
    open_alex_id: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnrichmentEntry:
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def coerce_count(value: Any) -> int:
    """Integer coercion with missing/NaN -> 0; negative counts are rejected."""
    if value is None or value == "":
        return 0
    if isinstance(value, float) and value != value:
        return 0
    n = int(value)
    if n < 0:
        raise ValueError(f"count must be non-negative, got {value!r}")
    return n


def normalize_key(s: str | None) -> str:
    """Lowercase and trim leading/trailing whitespace (interior whitespace kept)."""
    if s is None:
        return ""
    return str(s).lower().strip()


def _sort_key(record: MetadataRecord) -> tuple[str, str]:
    return normalize_key(record.doi), normalize_key(record.title)


def merge_and_deduplicate(
    record_lists: Sequence[Iterable[MetadataRecord]],
) -> list[MetadataRecord]:
    """Concatenate sources and drop duplicates in two passes.

    Records are stably sorted by (normalized DOI, normalized title). The first
    pass keeps the first record of every non-empty normalized DOI; the second
    keeps, among records without a DOI, the first record of every normalized
    title. Kept records come back in sorted order.
    """
    combined = [r for records in record_lists for r in records]
    if not combined:
        logger.warning("No records provided to merge_and_deduplicate.")
        return []

    ordered = sorted(combined, key=_sort_key)
    kept: list[MetadataRecord] = []
    seen_dois: set[str] = set()
    seen_titles: set[str] = set()
    for record in ordered:
        doi, title = _sort_key(record)
        if doi:
            if doi not in seen_dois:
                seen_dois.add(doi)
                kept.append(record)
        elif title not in seen_titles:
            seen_titles.add(title)
            kept.append(record)
    return kept


def enrich(record: MetadataRecord, entry: EnrichmentEntry) -> MetadataRecord:
    """Fill gaps in ``record`` from ``entry`` without overwriting existing data."""
    if normalize_key(record.doi) != normalize_key(entry.doi):
        raise ValueError(
            f"enrichment DOI {entry.doi!r} does not match record DOI {record.doi!r}"
        )

    updates: dict[str, Any] = {}
    if not record.abstract.strip() and entry.abstract is not None:
        updates["abstract"] = entry.abstract
    item_type_missing = not record.item_type.strip() or record.item_type in ITEM_TYPE_PLACEHOLDERS
    if item_type_missing and entry.item_type is not None:
        updates["item_type"] = entry.item_type

    count = entry.citation_count if entry.citation_count is not None else record.citation_count
    updates["citation_count"] = coerce_count(count)

    for name in ("primary_topic", "is_published", "is_retracted", "open_alex_id"):
        value = getattr(entry, name)
        if value is not None:
            updates[name] = value
    return dataclasses.replace(record, **updates)


def enrich_all(
    records: Iterable[MetadataRecord], entries: Iterable[EnrichmentEntry]
) -> list[MetadataRecord]:
    """Apply the matching entry (by normalized DOI) to every record that has one."""
    by_doi: dict[str, EnrichmentEntry] = {}
    for entry in entries:
        key = normalize_key(entry.doi)
        if key in by_doi:
            raise ValueError(f"duplicate enrichment entry for DOI {entry.doi!r}")
        by_doi[key] = entry

    out = []
    for record in records:
        entry = by_doi.get(normalize_key(record.doi)) if record.doi.strip() else None
        out.append(enrich(record, entry) if entry is not None else record)
    return out


def load_records(path) -> list[MetadataRecord]:
    return [MetadataRecord.from_dict(row) for row in read_jsonl(path)]


def save_records(path, records: Iterable[MetadataRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))
