"""Post-hoc verification of cited observations against ground truth."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .records import MetadataRecord, normalize_key

NA = "N/A"

PDF = "PDF"
STRUCTURED = "Structured"
KG = "KG"

FAMILY_FIELDS = {
    PDF: ("pdf_doc_index", "pdf_chunk_index"),
    STRUCTURED: ("struct_doc_index", "struct_chunk_index"),
    KG: ("kg_doc_index",),
}
CITATION_FIELDS = ("doi", "zotero_key", "in_text_citation", "full_citation")

# Wire names used by generated answers.
_WIRE_NAMES = {
    "SourceKind": "source_kind",
    "PDF_DocIndex": "pdf_doc_index",
    "PDF_ChunkIndex": "pdf_chunk_index",
    "Struct_DocIndex": "struct_doc_index",
    "Struct_ChunkIndex": "struct_chunk_index",
    "KG_DocIndex": "kg_doc_index",
    "Relation": "relation",
    "DOI": "doi",
    "ZoteroKey": "zotero_key",
    "InTextCitation": "in_text_citation",
    "FullCitation": "full_citation",
    "EvidenceText": "evidence_text",
}


@dataclass(frozen=True)
class Observation:
    source_kind: str = ""
    pdf_doc_index: str = NA
    pdf_chunk_index: str = NA
    struct_doc_index: str = NA
    struct_chunk_index: str = NA
    kg_doc_index: str = NA
    relation: str | None = None
    doi: str = ""
    zotero_key: str = ""
    in_text_citation: str = ""
    full_citation: str = ""
    evidence_text: str = ""

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Observation:
        """Accept snake_case or wire-style keys, flat or under ``"metadata"``."""
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if key == "metadata" and isinstance(value, Mapping):
                continue
            flat[key] = value
        if isinstance(data.get("metadata"), Mapping):
            flat.update(data["metadata"])
        kwargs = {}
        for key, value in flat.items():
            name = _WIRE_NAMES.get(key, key)
            if name in cls.__dataclass_fields__:
                if name != "relation" and value is not None:
                    value = str(value)
                kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def populated_families(self) -> list[str]:
        return [fam for fam, names in FAMILY_FIELDS.items() if any(_present(getattr(self, n)) for n in names)]


def _present(value: str | None) -> bool:
    return value is not None and value.strip() not in ("", NA)


def validate_schema(obs: Observation) -> list[str]:
    """Schema violations of ``obs``; an empty list means it is acceptable."""
    problems = []
    families = obs.populated_families()
    if not families:
        problems.append("no source indices populated")
    elif len(families) > 1:
        problems.append(f"mixed-source observation: {', '.join(families)}")
    else:
        family = families[0]
        for name in FAMILY_FIELDS[family]:
            if not _present(getattr(obs, name)):
                problems.append(f"{name} required for {family} source")
        if obs.source_kind and obs.source_kind != family:
            problems.append(f"source_kind {obs.source_kind!r} does not match populated {family} indices")
        has_relation = obs.relation is not None and obs.relation.strip() != ""
        if family == KG and not has_relation:
            problems.append("relation required for KG source")
        if family != KG and has_relation:
            problems.append("relation only allowed for KG source")
    for name in CITATION_FIELDS:
        if not getattr(obs, name).strip():
            problems.append(f"{name} required")
    return problems


@dataclass(frozen=True)
class MetadataMatch:
    doi: bool
    zotero_key: bool
    in_text_citation: bool
    full_citation: bool

    @property
    def all(self) -> bool:
        return self.doi and self.zotero_key and self.in_text_citation and self.full_citation


def canonical_table(records: Iterable[MetadataRecord]) -> dict[str, MetadataRecord]:
    return {normalize_key(r.doi): r for r in records if r.doi.strip()}


def verify_metadata(obs: Observation, canonical: Mapping[str, MetadataRecord]) -> MetadataMatch:
    record = canonical.get(normalize_key(obs.doi))
    if record is None:
        return MetadataMatch(False, False, False, False)
    return MetadataMatch(
        doi=normalize_key(obs.doi) == normalize_key(record.doi),
        zotero_key=obs.zotero_key.strip() == record.zotero_key.strip(),
        in_text_citation=obs.in_text_citation.strip() == record.in_text_citation.strip(),
        full_citation=obs.full_citation.strip() == record.full_citation.strip(),
    )


@dataclass(frozen=True)
class RetrievedChunk:
    """A chunk placed in the generator's context during a session."""

    family: str
    doc_idx: int
    chunk_idx: int
    content: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RetrievedChunk:
        return cls(d["family"], int(d["doc_idx"]), int(d.get("chunk_idx", 0)), d.get("content", ""))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _as_index(value: str | None) -> int | None:
    if not _present(value):
        return None
    try:
        return int(str(value).strip())
    except ValueError:
        return None


def locate_chunk(obs: Observation, retrieved: Iterable[RetrievedChunk]) -> RetrievedChunk | None:
    families = obs.populated_families()
    if len(families) != 1:
        return None
    family = families[0]
    names = FAMILY_FIELDS[family]
    doc = _as_index(getattr(obs, names[0]))
    chunk = _as_index(getattr(obs, names[1])) if len(names) > 1 else 0
    if doc is None or chunk is None:
        return None
    for rc in retrieved:
        if rc.family == family and rc.doc_idx == doc and rc.chunk_idx == chunk:
            return rc
    return None


def verify_indices(obs: Observation, retrieved: Iterable[RetrievedChunk]) -> bool:
    return locate_chunk(obs, retrieved) is not None


def levenshtein(a: str, b: str) -> int:
    """Edit distance over code points, one DP row at a time.

    Within a row, the left-neighbour dependency ``D[j] = min(A[j], D[j-1] + 1)``
    is resolved as ``j + cummin(A[k] - k)``, so each row is a few vector ops.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    bb = np.array([ord(ch) for ch in b], dtype=np.int64)
    cols = np.arange(len(b) + 1, dtype=np.int64)
    prev = cols.copy()
    for i, ch in enumerate(a, start=1):
        cost = (bb != ord(ch)).astype(np.int64)
        cand = np.empty_like(prev)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        prev = np.minimum.accumulate(cand - cols) + cols
    return int(prev[-1])


def content_similarity(evidence: str, source: str) -> float:
    """``1 - levenshtein / max(len)``; two empty strings are identical (1.0)."""
    longest = max(len(evidence), len(source))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(evidence, source) / longest


class Verdict(enum.IntEnum):
    INVALID = 0
    POSSIBLY_VALID = 1
    VALID = 2


VALID_THRESHOLD = 0.8
POSSIBLY_VALID_THRESHOLD = 0.5


def classify(score: float) -> Verdict:
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"similarity must lie in [0, 1], got {score}")
    if score >= VALID_THRESHOLD:
        return Verdict.VALID
    if score >= POSSIBLY_VALID_THRESHOLD:
        return Verdict.POSSIBLY_VALID
    return Verdict.INVALID


@dataclass(frozen=True)
class VerificationReport:
    schema_ok: bool
    violations: tuple[str, ...]
    doi_match: bool
    zotero_match: bool
    in_text_match: bool
    full_citation_match: bool
    index_ok: bool
    similarity: float
    verdict: Verdict

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["violations"] = list(self.violations)
        d["verdict"] = self.verdict.name
        return d


def verify_observation(
    obs: Observation,
    canonical: Mapping[str, MetadataRecord],
    retrieved: Sequence[RetrievedChunk],
) -> VerificationReport:
    """Run every check on one observation.

    Similarity compares the evidence text with the content of the chunk its
    indices point at; an observation whose chunk was never retrieved scores 0.
    """
    violations = validate_schema(obs)
    meta = verify_metadata(obs, canonical)
    chunk = locate_chunk(obs, retrieved)
    similarity = content_similarity(obs.evidence_text, chunk.content) if chunk else 0.0
    return VerificationReport(
        schema_ok=not violations,
        violations=tuple(violations),
        doi_match=meta.doi,
        zotero_match=meta.zotero_key,
        in_text_match=meta.in_text_citation,
        full_citation_match=meta.full_citation,
        index_ok=chunk is not None,
        similarity=similarity,
        verdict=classify(similarity),
    )
