"""Query enhancement, hybrid retrieval and the bounded generate/evaluate loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .graph import Graph, entity_context, graph_search
from .index import GRAPH, KEYWORD, Collection, FusionConfig, RankedList, rrf_fuse
from .jsonio import read_json, write_json, write_jsonl
from .verify import Observation, RetrievedChunk, VerificationReport, validate_schema

logger = logging.getLogger(__name__)

FAMILY_PDF = "PDF"
FAMILY_STRUCTURED = "Structured"


@dataclass
class Answer:
    text: str
    observations: list[Observation] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Answer:
        return cls(d.get("text", ""), [Observation.from_dict(o) for o in d.get("observations", ())])

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "observations": [o.to_dict() for o in self.observations]}


class Agents(Protocol):
    def generate(self, query: str, context: Any, feedback: str | None = None) -> Answer: ...

    def evaluate(self, answer: Answer, context: Any) -> tuple[bool, str]: ...


class Reformulator(Protocol):
    def reformulate(self, query: str) -> tuple[str, list[str]]: ...


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 3

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    answer: Answer
    violations: list[str]
    passed: bool
    feedback: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "answer": self.answer.to_dict(),
            "violations": self.violations,
            "passed": self.passed,
            "feedback": self.feedback,
        }


@dataclass(frozen=True)
class PreferenceTriplet:
    prompt: str
    rejected: Answer
    chosen: Answer

    def to_dict(self) -> dict[str, Any]:
        return {"prompt": self.prompt, "rejected": self.rejected.to_dict(), "chosen": self.chosen.to_dict()}


@dataclass
class SessionLog:
    kb_name: str
    query: str
    enhanced_query: str = ""
    keywords: list[str] = field(default_factory=list)
    entities: list[str] = field(default_factory=list)
    retrieval: dict[str, Any] = field(default_factory=dict)
    iterations: list[IterationRecord] = field(default_factory=list)
    final_answer: Answer | None = None
    validated: bool = False
    verification: list[VerificationReport] = field(default_factory=list)
    error: str | None = None

    @property
    def session_id(self) -> str:
        return hashlib.sha256(f"{self.kb_name}\x00{self.query}".encode("utf-8")).hexdigest()[:12]


@dataclass
class LoopResult:
    answer: Answer
    validated: bool
    log: SessionLog
    triplets: list[PreferenceTriplet]


class LoopAborted(RuntimeError):
    """An agent raised; ``log`` holds everything recorded up to that point."""

    def __init__(self, message: str, log: SessionLog) -> None:
        super().__init__(message)
        self.log = log


Verifier = Callable[[Answer], list[VerificationReport]]


def run_loop(
    query: str,
    context: Any,
    agents: Agents,
    cfg: LoopConfig = LoopConfig(),
    verifier: Verifier | None = None,
    log: SessionLog | None = None,
) -> LoopResult:
    """Generate, schema-check and evaluate up to ``cfg.max_iterations`` times.

    An answer with schema violations fails without reaching the evaluator and
    the violations become the next feedback. When an answer passes, every
    earlier rejected answer is paired with it as a preference triplet. If no
    answer passes, the last one is returned with ``validated=False``. The
    final answer is verified by ``verifier`` either way.
    """
    log = log or SessionLog(kb_name="", query=query)
    feedback: str | None = None
    answer: Answer | None = None
    passed = False
    for n in range(1, cfg.max_iterations + 1):
        try:
            answer = agents.generate(query, context, feedback if n > 1 else None)
            violations = [
                f"observation {i}: {v}"
                for i, obs in enumerate(answer.observations)
                for v in validate_schema(obs)
            ]
            if violations:
                passed, feedback = False, "Schema violations: " + "; ".join(violations)
            else:
                passed, feedback = agents.evaluate(answer, context)
        except Exception as exc:
            log.error = f"iteration {n}: {exc}"
            raise LoopAborted(f"agent failure in iteration {n}: {exc}", log) from exc
        log.iterations.append(IterationRecord(n, answer, violations, passed, feedback))
        if passed:
            break

    assert answer is not None
    triplets = []
    if passed:
        for rec in log.iterations[:-1]:
            if rec.answer != answer:
                triplets.append(PreferenceTriplet(query, rec.answer, answer))
    log.final_answer = answer
    log.validated = passed
    if verifier is not None:
        log.verification = verifier(answer)
    return LoopResult(answer, passed, log, triplets)


@dataclass
class QueryEnhancement:
    query: str
    enhanced_query: str
    keywords: list[str]
    entities: list[str]
    context: list[dict[str, Any]]


def enhance_query(
    query: str,
    reformulator: Reformulator | None,
    unifier=None,
    graph: Graph | None = None,
) -> QueryEnhancement:
    """Reformulate, pull 3-5 keywords, map terms to canonical entities, and
    attach graph context for those entities."""
    enhanced, keywords = query, []
    if reformulator is not None:
        try:
            enhanced, keywords = reformulator.reformulate(query)
            keywords = list(keywords)[:5]
            if len(keywords) < 3:
                logger.warning("reformulator returned %d keywords (expected 3-5)", len(keywords))
        except Exception as exc:
            logger.warning("query reformulation failed, using original query: %s", exc)
            enhanced, keywords = query, []

    entities: list[str] = []
    if unifier is not None:
        for text in dict.fromkeys([query, enhanced]):
            for _, canonical in unifier.extract_entities(text):
                if canonical not in entities:
                    entities.append(canonical)

    context = []
    if graph is not None and entities:
        context = [asdict(c) for c in entity_context(graph, entities)]
    return QueryEnhancement(query, enhanced, keywords, entities, context)


@dataclass
class RetrievalResult:
    lists: list[RankedList]
    fused: list[tuple[str, float]]
    chunks: list[RetrievedChunk]

    def to_dict(self) -> dict[str, Any]:
        return {
            "lists": [{"source": r.source, "entries": list(r.entries), "scores": r.scores} for r in self.lists],
            "fused": [{"id": i, "score": s} for i, s in self.fused],
            "chunks": [c.to_dict() for c in self.chunks],
        }


def _key(family: str, pid: int) -> str:
    return f"{family}:{pid}"


def hybrid_retrieve(
    query_vec,
    keywords: Sequence[str],
    entities: Sequence[str],
    collections: Mapping[str, Collection],
    graph: Graph | None = None,
    fusion: FusionConfig = FusionConfig(),
    context_size: int = 8,
) -> RetrievalResult:
    """Semantic, keyword and graph rankings fused with RRF.

    ``collections`` maps a source family (PDF, Structured) to its collection.
    Fused ids have the form ``"<family>:<point id>"``; graph hits are ranked
    by matched-entity count then DOI and resolved to structured points.
    """
    lists: list[RankedList] = []
    for family in sorted(collections):
        coll = collections[family]
        sem = coll.semantic_search(query_vec, fusion.top_k)
        lists.append(RankedList(sem.source, [_key(family, p) for p in sem.entries], sem.scores))
        hits: list[str] = []
        for kw in keywords:
            if not kw.strip():
                continue
            for pid in coll.keyword_search(kw, fusion.top_k).entries:
                key = _key(family, pid)
                if key not in hits:
                    hits.append(key)
        lists.append(RankedList(KEYWORD, hits))

    structured = collections.get(FAMILY_STRUCTURED)
    if graph is not None and structured is not None and entities:
        by_doi: dict[str, list[int]] = {}
        for pid in sorted(structured.points):
            doi = str(structured.points[pid].payload.get("doi", "")).lower()
            by_doi.setdefault(doi, []).append(pid)
        entries = []
        for doi, _ in graph_search(graph, entities):
            for pid in by_doi.get(doi, []):
                entries.append(_key(FAMILY_STRUCTURED, pid))
        lists.append(RankedList(GRAPH, entries))

    fused = rrf_fuse(lists, fusion)
    chunks = []
    for key, _ in fused[:context_size]:
        family, pid = key.split(":", 1)
        point = collections[family].points[int(pid)]
        chunks.append(
            RetrievedChunk(family, int(point.payload["doc_idx"]), int(point.payload["chunk_idx"]), point.payload.get("content", ""))
        )
    return RetrievalResult(lists, fused, chunks)


class ScriptedAgents:
    """Generator/evaluator/reformulator replaying a fixed script.

    Script keys: ``answers`` (one per iteration, the last repeats),
    ``verdicts`` (``{"pass": bool, "feedback": str}`` per iteration),
    ``reformulation`` (``{"query": str, "keywords": [...]}``) and optional
    ``fail_on_iteration`` to simulate an agent error.
    """

    def __init__(self, script: Mapping[str, Any]) -> None:
        self.script = script
        self.answers = [Answer.from_dict(a) for a in script.get("answers", ())]
        if not self.answers:
            raise ValueError("script needs at least one answer")
        self.verdicts = list(script.get("verdicts", ()))
        self.generated = 0
        self.feedback_seen: list[str | None] = []

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedAgents:
        return cls(read_json(path))

    def generate(self, query: str, context: Any, feedback: str | None = None) -> Answer:
        self.generated += 1
        self.feedback_seen.append(feedback)
        if self.script.get("fail_on_iteration") == self.generated:
            raise RuntimeError("scripted generator failure")
        return self.answers[min(self.generated, len(self.answers)) - 1]

    def evaluate(self, answer: Answer, context: Any) -> tuple[bool, str]:
        if not self.verdicts:
            return True, ""
        v = self.verdicts[min(self.generated, len(self.verdicts)) - 1]
        return bool(v.get("pass")), str(v.get("feedback", ""))

    def reformulate(self, query: str) -> tuple[str, list[str]]:
        ref = self.script.get("reformulation")
        if not ref:
            return query, []
        return ref.get("query", query), list(ref.get("keywords", ()))


def write_session(root: str | Path, log: SessionLog, triplets: Sequence[PreferenceTriplet]) -> Path:
    """Write ``<root>/<kb>/<session-id>/`` with one file per session facet."""
    folder = Path(root) / log.kb_name / log.session_id
    write_json(
        folder / "query.json",
        {
            "kb_name": log.kb_name,
            "query": log.query,
            "enhanced_query": log.enhanced_query,
            "keywords": log.keywords,
            "entities": log.entities,
        },
    )
    write_json(folder / "retrieval.json", log.retrieval)
    for rec in log.iterations:
        write_json(folder / f"iteration-{rec.iteration}.json", rec.to_dict())
    write_json(
        folder / "final.json",
        {
            "answer": log.final_answer.to_dict() if log.final_answer else None,
            "validated": log.validated,
            "iterations": len(log.iterations),
            "error": log.error,
        },
    )
    write_jsonl(folder / "triplets.jsonl", (t.to_dict() for t in triplets))
    write_json(folder / "verification.json", [r.to_dict() for r in log.verification])
    return folder
