"""Brute-force vector collections, keyword filtering and Reciprocal Rank Fusion."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .jsonio import read_jsonl, write_jsonl

POINT_ID_STRIDE = 10000

SEMANTIC = "semantic"
KEYWORD = "keyword"
GRAPH = "graph"
SOURCE_PRIORITY = {SEMANTIC: 0, KEYWORD: 1, GRAPH: 2}


def deterministic_point_id(doc_idx: int, chunk_idx: int) -> int:
    if doc_idx < 0 or chunk_idx < 0:
        raise ValueError("indices must be non-negative")
    if chunk_idx >= POINT_ID_STRIDE:
        raise ValueError(
            f"chunk_idx {chunk_idx} >= {POINT_ID_STRIDE} would collide with the next document"
        )
    return doc_idx * POINT_ID_STRIDE + chunk_idx


@dataclass
class VectorPoint:
    id: int
    vector: np.ndarray
    payload: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "vector": [float(x) for x in self.vector], "payload": self.payload}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> VectorPoint:
        return cls(int(d["id"]), np.asarray(d["vector"], dtype=float), dict(d.get("payload") or {}))


@dataclass
class RankedList:
    source: str
    entries: list[Hashable]
    scores: list[float] | None = None

    def __post_init__(self) -> None:
        if self.source not in SOURCE_PRIORITY:
            raise ValueError(f"unknown retrieval source {self.source!r}")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("ranked list contains duplicate ids")


class Collection:
    """Cosine-distance point collection. Writes are serialized; reads are lock-free."""

    distance = "cosine"

    def __init__(self, name: str, dimension: int) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.name = name
        self.dimension = dimension
        self.points: dict[int, VectorPoint] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.points)

    def upsert_batch(self, points: Sequence[VectorPoint]) -> int:
        """Insert or replace points by id; the whole batch is rejected on any error."""
        checked = []
        for p in points:
            vec = np.asarray(p.vector, dtype=float)
            if vec.shape != (self.dimension,):
                raise ValueError(
                    f"point {p.id}: vector length {vec.size} != collection dimension {self.dimension}"
                )
            if p.id < 0:
                raise ValueError(f"point {p.id}: id must be non-negative")
            checked.append(VectorPoint(int(p.id), vec, dict(p.payload)))
        with self._lock:
            updated = dict(self.points)
            for p in checked:
                updated[p.id] = p
            self.points = updated
        return len(self.points)

    def semantic_search(self, query_vec: Sequence[float], k: int) -> RankedList:
        """Top-k by cosine similarity, descending; equal scores by ascending id."""
        q = np.asarray(query_vec, dtype=float)
        if q.shape != (self.dimension,):
            raise ValueError("query dimension does not match the collection")
        points = self.points
        if k <= 0 or not points:
            return RankedList(SEMANTIC, [], [])
        ids = sorted(points)
        matrix = np.vstack([points[i].vector for i in ids])
        qn = np.linalg.norm(q)
        norms = np.linalg.norm(matrix, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(norms * qn > 0, matrix @ q / (norms * qn), 0.0)
        order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:k]
        return RankedList(SEMANTIC, [ids[i] for i in order], [float(sims[i]) for i in order])

    def keyword_search(self, needle: str, k: int) -> RankedList:
        """Points whose content contains ``needle`` (case-insensitive), by ascending id."""
        if not needle:
            raise ValueError("keyword needle must be non-empty")
        folded = needle.casefold()
        hits = [
            pid
            for pid in sorted(self.points)
            if folded in str(self.points[pid].payload.get("content", "")).casefold()
        ]
        return RankedList(KEYWORD, hits[: max(k, 0)])

    def save(self, path: str | Path) -> None:
        write_jsonl(path, (self.points[i].to_dict() for i in sorted(self.points)))

    @classmethod
    def load(cls, path: str | Path, name: str | None = None, dimension: int | None = None) -> Collection:
        points = [VectorPoint.from_dict(row) for row in read_jsonl(path)]
        if dimension is None:
            if not points:
                raise ValueError(f"{path}: empty collection file needs an explicit dimension")
            dimension = points[0].vector.size
        coll = cls(name or Path(path).stem, dimension)
        coll.upsert_batch(points)
        return coll


@dataclass(frozen=True)
class FusionConfig:
    K: int = 60
    top_k: int = 20

    def __post_init__(self) -> None:
        if self.K < 1 or self.top_k < 1:
            raise ValueError("K and top_k must be >= 1")


def rrf_fuse(lists: Sequence[RankedList], cfg: FusionConfig = FusionConfig()) -> list[tuple[Hashable, float]]:
    """Reciprocal Rank Fusion with 1-based ranks; ranks past ``top_k`` add nothing.

    Equal scores are ordered by the highest-priority source the id appears in
    (semantic, keyword, graph), then by id.
    """
    contributions: dict[Hashable, list[float]] = {}
    priority: dict[Hashable, int] = {}
    for ranked in lists:
        prio = SOURCE_PRIORITY[ranked.source]
        for rank, item in enumerate(ranked.entries[: cfg.top_k], start=1):
            contributions.setdefault(item, []).append(1.0 / (cfg.K + rank))
            priority[item] = min(priority.get(item, prio), prio)
    scored = [(item, math.fsum(parts)) for item, parts in contributions.items()]
    scored.sort(key=lambda x: (-x[1], priority[x[0]], x[0]))
    return scored


def structured_content(record_fields: Mapping[str, Any], names: Iterable[str] | None = None) -> str:
    """``"Field Name: value, value"`` lines for the structured-field collection."""
    lines = []
    for name in names if names is not None else record_fields:
        value = record_fields.get(name)
        if value is None or value == "" or value == []:
            continue
        if isinstance(value, Mapping):
            text = ", ".join(f"{k}={v}" for k, v in value.items())
        elif isinstance(value, (list, tuple)):
            text = ", ".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{name}: {text}")
    return "\n".join(lines)


def build_points(
    chunks: Sequence[tuple[int, int, str]],
    provider,
    metadata: Mapping[int, Mapping[str, Any]] | None = None,
    batch_size: int = 25,
) -> list[VectorPoint]:
    """Embed ``(doc_idx, chunk_idx, content)`` triples in batches into points."""
    points = []
    for start in range(0, len(chunks), batch_size):
        batch = chunks[start : start + batch_size]
        vectors = provider.embed_batch([c[2] for c in batch])
        for (doc_idx, chunk_idx, content), vec in zip(batch, vectors):
            pid = deterministic_point_id(doc_idx, chunk_idx)
            payload: dict[str, Any] = {
                "doc_idx": doc_idx,
                "chunk_idx": chunk_idx,
                "content": content,
                "point_id": pid,
            }
            if metadata and doc_idx in metadata:
                for key, value in metadata[doc_idx].items():
                    if value not in (None, ""):
                        payload[key] = str(value)
            points.append(VectorPoint(pid, np.asarray(vec, dtype=float), payload))
    return points
