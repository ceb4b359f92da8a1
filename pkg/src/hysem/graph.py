"""In-process property graph with merge semantics and typed analytical queries."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .jsonio import dumps
from .records import MetadataRecord, normalize_key

NodeRef = tuple[str, str]  # (label, key)
EdgeTriple = tuple[NodeRef, str, NodeRef]

ARTICLE = "Article"

DEFAULT_EXCLUDED_STUDY_TYPES = (
    "review",
    "systematic review",
    "meta-analysis",
    "expert opinion",
    "scoping review",
    "dissertation/thesis",
    "short communication",
    "methodological paper",
    "theoretical study",
    "report",
)


class Graph:
    """Nodes keyed by (label, key); edges are unique (from, type, to) triples.

    Mutations take a lock; reads of the insertion-ordered maps are safe once
    writers are done.
    """

    def __init__(self) -> None:
        self.nodes: dict[NodeRef, dict[str, Any]] = {}
        self.edges: dict[EdgeTriple, None] = {}
        self._out: dict[NodeRef, list[EdgeTriple]] = {}
        self._lock = threading.RLock()

    def merge_node(self, label: str, key: str, properties: Mapping[str, Any] | None = None) -> NodeRef:
        if not label or not key:
            raise ValueError("node label and key must be non-empty")
        ref = (label, key)
        with self._lock:
            props = self.nodes.setdefault(ref, {})
            if properties:
                props.update(properties)
        return ref

    def merge_edge(self, src: NodeRef, rel_type: str, dst: NodeRef) -> bool:
        """Add the edge if missing; returns True when it was created."""
        if not rel_type:
            raise ValueError("relationship type must be non-empty")
        triple = (src, rel_type, dst)
        with self._lock:
            if src not in self.nodes or dst not in self.nodes:
                raise KeyError("both endpoints must exist before merging an edge")
            if triple in self.edges:
                return False
            self.edges[triple] = None
            self._out.setdefault(src, []).append(triple)
            return True

    def out_edges(self, src: NodeRef, rel_type: str | None = None) -> list[EdgeTriple]:
        edges = self._out.get(src, [])
        if rel_type is None:
            return list(edges)
        return [e for e in edges if e[1] == rel_type]

    def nodes_with_label(self, label: str) -> list[NodeRef]:
        return [ref for ref in self.nodes if ref[0] == label]

    def name_of(self, ref: NodeRef) -> str:
        return str(self.nodes[ref].get("name", ref[1]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [
                {"label": label, "key": key, "properties": props}
                for (label, key), props in self.nodes.items()
            ],
            "edges": [
                {
                    "from": {"label": s[0], "key": s[1]},
                    "type": rel,
                    "to": {"label": d[0], "key": d[1]},
                }
                for s, rel, d in self.edges
            ],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Graph:
        g = cls()
        for n in data.get("nodes", ()):
            g.merge_node(n["label"], n["key"], n.get("properties") or {})
        for e in data.get("edges", ()):
            g.merge_edge(
                (e["from"]["label"], e["from"]["key"]),
                e["type"],
                (e["to"]["label"], e["to"]["key"]),
            )
        return g


def upsert_article(
    g: Graph, record: MetadataRecord, topic: Mapping[str, Any] | None = None
) -> NodeRef:
    """Merge the Article node for ``record`` keyed by its normalized DOI.

    ``topic`` carries topic-model outputs (for example the dominant topic id
    and its top words) to be stored as node properties.
    """
    doi = normalize_key(record.doi)
    if not doi:
        raise ValueError("cannot upsert an article without a DOI")
    props: dict[str, Any] = {
        "doi": doi,
        "title": record.title,
        "citation_count": record.citation_count,
        "zotero_key": record.zotero_key,
    }
    if topic:
        props.update({f"topic_{k}": v for k, v in topic.items()})
    return g.merge_node(ARTICLE, doi, props)


@dataclass(frozen=True)
class FieldMapping:
    label: str
    relationship: str
    dictionary: str | None = None

    def __post_init__(self) -> None:
        if not self.label or not self.relationship:
            raise ValueError("entity label and relationship type must be non-empty")


def load_field_mappings(data: Mapping[str, Any]) -> dict[str, FieldMapping]:
    """Parse ``{"field_mappings": {field: {label, relationship, dictionary?}}}``."""
    raw = data.get("field_mappings", data)
    return {
        name: FieldMapping(m["label"], m["relationship"], m.get("dictionary"))
        for name, m in raw.items()
    }


def _field_values(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, Mapping):
        return [str(k) for k in value]
    if isinstance(value, Iterable):
        return [v for v in value if isinstance(v, str)]
    return [str(value)]


def apply_field_mappings(
    g: Graph,
    record: MetadataRecord,
    mappings: Mapping[str, FieldMapping],
    unifier=None,
) -> list[EdgeTriple]:
    """Link the record's Article node to one entity node per mapped field value.

    When a mapping names a dictionary and a unifier is given, values are
    replaced by their canonical term; values that fail to unify are dropped.
    Returns only the edges that did not exist before.
    """
    article = (ARTICLE, normalize_key(record.doi))
    if article not in g.nodes:
        raise KeyError(f"article node missing for DOI {record.doi!r}")

    created = []
    for field_name, mapping in mappings.items():
        for raw in _field_values(record.extracted_fields.get(field_name)):
            name = raw.strip()
            if not name:
                continue
            if mapping.dictionary and unifier is not None:
                name = unifier.unify(name, mapping.dictionary)
                if name is None:
                    continue
            entity = g.merge_node(mapping.label, name, {"name": name})
            edge = (article, mapping.relationship, entity)
            if g.merge_edge(*edge):
                created.append(edge)
    return created


@dataclass(frozen=True)
class MethodQuery:
    excluded_study_types: tuple[str, ...] = DEFAULT_EXCLUDED_STUDY_TYPES
    pollutant_substring: str = "ozone"
    excluded_title_terms: tuple[str, ...] = ("comment", "reply")
    study_type_rel: str = "STUDY_TYPE"
    method_rel: str = "USES_ML_METHOD"
    disease_rel: str = "ASSOCIATED_WITH_HEART_DISEASE"
    pollutant_rel: str = "RELATED_TO_POLLUTANT"
    method_label: str = "MLMethod"
    study_type_label: str = "StudyType"
    disease_label: str = "HeartDisease"
    pollutant_label: str = "PollutantTerm"


def _targets(g: Graph, src: NodeRef, rel: str, label: str) -> list[NodeRef]:
    return [e[2] for e in g.out_edges(src, rel) if e[2][0] == label]


def query_method_distribution(
    g: Graph, criteria: MethodQuery = MethodQuery()
) -> list[tuple[str, int]]:
    """Method usage counts over empirical ozone/heart-disease articles.

    An article qualifies when it has at least one study type and none of them
    is excluded, uses at least one method, links to a heart-disease entity
    and to a pollutant whose name contains the pollutant substring, and its
    title mentions none of the excluded terms. Counts are distinct articles
    per method, sorted by count descending then method name.
    """
    excluded = {s.lower() for s in criteria.excluded_study_types}
    pollutant = criteria.pollutant_substring.lower()
    counts: dict[str, set[str]] = {}

    for article in g.nodes_with_label(ARTICLE):
        study_types = {
            g.name_of(n).lower()
            for n in _targets(g, article, criteria.study_type_rel, criteria.study_type_label)
        }
        if not study_types or study_types & excluded:
            continue
        methods = _targets(g, article, criteria.method_rel, criteria.method_label)
        if not methods:
            continue
        if not _targets(g, article, criteria.disease_rel, criteria.disease_label):
            continue
        pollutants = _targets(g, article, criteria.pollutant_rel, criteria.pollutant_label)
        if not any(pollutant in g.name_of(p).lower() for p in pollutants):
            continue
        title = str(g.nodes[article].get("title") or "").lower()
        if any(term in title for term in criteria.excluded_title_terms):
            continue
        doi = str(g.nodes[article].get("doi", article[1]))
        for m in methods:
            counts.setdefault(g.name_of(m), set()).add(doi)

    return sorted(((name, len(dois)) for name, dois in counts.items()), key=lambda x: (-x[1], x[0]))


def graph_search(g: Graph, entity_names: Sequence[str]) -> list[tuple[str, int]]:
    """Articles linked to any of the named entities.

    Ranked by the number of distinct matched entities, then DOI.
    """
    wanted = {n.lower() for n in entity_names if n}
    hits: dict[str, set[str]] = {}
    for article in g.nodes_with_label(ARTICLE):
        for _, _, dst in g.out_edges(article):
            name = g.name_of(dst).lower()
            if name in wanted:
                hits.setdefault(article[1], set()).add(name)
    return sorted(((doi, len(names)) for doi, names in hits.items()), key=lambda x: (-x[1], x[0]))


@dataclass
class EntityContext:
    entity: str
    articles: list[str] = field(default_factory=list)


def entity_context(g: Graph, entity_names: Sequence[str]) -> list[EntityContext]:
    """Per-entity list of linked article DOIs, for query enrichment."""
    out = []
    for name in entity_names:
        low = name.lower()
        dois = sorted(
            {
                src[1]
                for src, _, dst in g.edges
                if src[0] == ARTICLE and g.name_of(dst).lower() == low
            }
        )
        out.append(EntityContext(name, dois))
    return out
