"""Chunked, context-carrying structured-field extraction with cumulative merging."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .chunking import EXTRACTION_SPEC, ChunkSpec, Tokenizer, chunk_text
from .jsonio import read_json, write_json

logger = logging.getLogger(__name__)

TEXT_KIND = "text"
LIST_KIND = "list"
STRUCTURED_KIND = "structured"
KINDS = (TEXT_KIND, LIST_KIND, STRUCTURED_KIND)

FieldMap = dict[str, Any]


@dataclass(frozen=True)
class FieldSpec:
    name: str
    explanation: str = ""
    kind: str = TEXT_KIND

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"field {self.name!r}: unknown kind {self.kind!r}")


def load_field_specs(data: Any) -> list[FieldSpec]:
    """Accept ``[{name, explanation, kind}, ...]`` or ``{"fields": [...]}``."""
    rows = data["fields"] if isinstance(data, Mapping) else data
    specs = [FieldSpec(r["name"], r.get("explanation", ""), r.get("kind", TEXT_KIND)) for r in rows]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("field names must be unique")
    return specs


class Extractor(Protocol):
    def extract(self, state: FieldMap, chunk_text: str, specs: Sequence[FieldSpec]) -> FieldMap: ...


def _as_list(value: Any) -> list:
    if value is None or value == "":
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def unify_fields(state: Mapping[str, Any], update: Mapping[str, Any], specs: Sequence[FieldSpec]) -> FieldMap:
    """Merge one extractor update into the accumulated field map.

    List fields take the union in order of first appearance, text fields are
    overwritten by any non-empty value, and structured fields merge key-wise
    with the update winning. Unknown keys are rejected.
    """
    by_name = {s.name: s for s in specs}
    unknown = sorted(k for k in update if k not in by_name)
    if unknown:
        raise ValueError(f"extractor returned unknown fields: {', '.join(unknown)}")

    merged = copy.deepcopy(dict(state))
    for name, value in update.items():
        kind = by_name[name].kind
        if kind == LIST_KIND:
            items = _as_list(merged.get(name))
            for item in _as_list(value):
                if item not in items:
                    items.append(item)
            if items:
                merged[name] = items
        elif kind == STRUCTURED_KIND:
            if isinstance(value, Mapping) and value:
                current = merged.get(name)
                combined = dict(current) if isinstance(current, Mapping) else {}
                combined.update(copy.deepcopy(dict(value)))
                merged[name] = combined
        else:
            if value is not None and str(value).strip():
                merged[name] = value
    return merged


def cache_key(state: Mapping[str, Any], chunk: str) -> str:
    blob = json.dumps(state, sort_keys=True, ensure_ascii=False) + "\x00" + chunk
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ExtractionCache:
    """Extractor outputs keyed by (state, chunk); optionally persisted as JSON."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self.entries: dict[str, FieldMap] = {}
        if self.path and self.path.exists():
            self.entries = read_json(self.path)
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> FieldMap | None:
        value = self.entries.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return copy.deepcopy(value)

    def put(self, key: str, value: FieldMap) -> None:
        self.entries[key] = copy.deepcopy(value)

    def save(self) -> None:
        if self.path:
            write_json(self.path, self.entries)


@dataclass
class ExtractionResult:
    fields: FieldMap
    failures: list[str] = field(default_factory=list)
    chunks: int = 0


def extract_document(
    full_text: str,
    specs: Sequence[FieldSpec],
    extractor: Extractor,
    cache: ExtractionCache | None = None,
    spec: ChunkSpec = EXTRACTION_SPEC,
    tok: Tokenizer | None = None,
) -> ExtractionResult:
    """Walk the document's chunks in order, feeding the running field map back in.

    A chunk whose extraction raises (or returns unknown fields) is skipped
    and the failure recorded; later chunks still run.
    """
    cache = cache if cache is not None else ExtractionCache()
    state: FieldMap = {}
    chunks = chunk_text(full_text, spec, tok)
    result = ExtractionResult(state, chunks=len(chunks))
    for i, chunk in enumerate(chunks):
        key = cache_key(state, chunk)
        update = cache.get(key)
        try:
            if update is None:
                update = extractor.extract(copy.deepcopy(state), chunk, specs)
                cache.put(key, update)
            state = unify_fields(state, update, specs)
        except Exception as exc:
            logger.warning("extraction failed on chunk %d: %s", i, exc)
            result.failures.append(f"chunk {i}: {exc}")
    result.fields = state
    return result


class ScriptedExtractor:
    """Rule-driven stand-in for a model-backed extractor.

    Each rule is ``{"contains": str, "output": {...}, "requires": {field: value}}``.
    A rule fires when its substring occurs in the chunk (case-insensitive) and
    every ``requires`` value is already present in the running state (equal,
    or contained for list fields). Outputs of firing rules are combined in
    rule order. ``calls`` counts invocations.
    """

    def __init__(self, rules: Sequence[Mapping[str, Any]]) -> None:
        self.rules = list(rules)
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedExtractor:
        data = read_json(path)
        return cls(data["rules"] if isinstance(data, Mapping) else data)

    def extract(self, state: FieldMap, chunk_text: str, specs: Sequence[FieldSpec]) -> FieldMap:
        self.calls += 1
        text = chunk_text.lower()
        out: FieldMap = {}
        for rule in self.rules:
            if "raise" in rule and rule["raise"].lower() in text:
                raise RuntimeError(f"scripted failure on {rule['raise']!r}")
            if rule.get("contains", "").lower() not in text:
                continue
            if not all(_satisfied(state.get(k), v) for k, v in rule.get("requires", {}).items()):
                continue
            for k, v in rule.get("output", {}).items():
                if isinstance(v, list) and isinstance(out.get(k), list):
                    out[k] = out[k] + [x for x in v if x not in out[k]]
                else:
                    out[k] = v
        return out


def _satisfied(current: Any, wanted: Any) -> bool:
    if isinstance(current, list):
        return wanted in current
    return current == wanted
