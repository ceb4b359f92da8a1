"""Stage driver: each stage reads the previous stage's artifact from the work
directory and writes its own."""

from __future__ import annotations

import itertools
import json
import logging
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import fetcher, layout
from .chunking import ChunkSpec, chunk_text
from .extraction import ExtractionCache, ScriptedExtractor, extract_document, load_field_specs
from .graph import Graph, apply_field_mappings, load_field_mappings, upsert_article
from .index import Collection, FusionConfig, build_points, structured_content
from .jsonio import read_json, read_jsonl, write_json, write_jsonl
from .qaloop import (
    FAMILY_PDF,
    FAMILY_STRUCTURED,
    LoopAborted,
    LoopConfig,
    ScriptedAgents,
    SessionLog,
    enhance_query,
    hybrid_retrieve,
    run_loop,
    write_session,
)
from .records import (
    EnrichmentEntry,
    MetadataRecord,
    enrich_all,
    load_records,
    merge_and_deduplicate,
    save_records,
)
from .topics import (
    LdaConfig,
    build_vocabulary,
    form_ngrams,
    grid_search,
    model_to_dict,
    preprocess,
)
from .unify import HashingEmbeddingProvider, Unifier, UnifyConfig, load_dictionaries
from .verify import canonical_table, verify_observation

logger = logging.getLogger(__name__)

STAGES = ("records", "fetch", "layout", "extraction", "topics", "graph", "index", "ask")

ARTIFACTS = {
    "records": "records.jsonl",
    "fetch": "fetched.jsonl",
    "layout": "parsed.jsonl",
    "extraction": "extracted.jsonl",
    "topics": "topics.json",
    "graph": "graph.json",
    "index": "chunks.jsonl",
    "ask": "verification.json",
}

_BODY_EXCLUDED_LABELS = frozenset({"PAGE_HEADER", "PAGE_FOOTER", "PICTURE"})


class ConfigError(ValueError):
    """The pipeline configuration is malformed."""


class StageError(RuntimeError):
    """A stage could not run or failed."""


@dataclass
class PipelineConfig:
    kb_prefix: str
    base_dir: Path
    workdir: Path
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, workdir: str | Path | None = None) -> PipelineConfig:
        path = Path(path)
        try:
            data = read_json(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent, workdir)

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], base_dir: Path, workdir: str | Path | None = None
    ) -> PipelineConfig:
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        kb = str(data.get("kb_prefix", "")).strip()
        if not kb:
            raise ConfigError("kb_prefix must be a non-empty string")
        if not re.fullmatch(r"[A-Za-z0-9_-]+", kb):
            raise ConfigError("kb_prefix may only contain letters, digits, '_' and '-'")
        unknown = set(data) - {"kb_prefix", "workdir", *STAGES, "unify"}
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
        wd = Path(workdir) if workdir else base_dir / data.get("workdir", "work")
        stages = {k: dict(data.get(k) or {}) for k in (*STAGES, "unify")}
        return cls(kb, base_dir, wd, stages)

    def section(self, name: str) -> dict[str, Any]:
        return self.stages.get(name, {})

    def path(self, section: str, key: str, required: bool = True) -> Path | None:
        value = self.section(section).get(key)
        if value is None:
            if required:
                raise ConfigError(f"{section}.{key} is required")
            return None
        return self.base_dir / value

    def artifact(self, stage: str) -> Path:
        return self.workdir / ARTIFACTS[stage]

    @property
    def pdf_collection(self) -> str:
        return f"{self.kb_prefix}_pdf_chunks"

    @property
    def structured_collection(self) -> str:
        return f"{self.kb_prefix}_structured"


def _require(cfg: PipelineConfig, stage: str, hint: str | None = None) -> Path:
    path = cfg.artifact(stage)
    if not path.exists():
        raise StageError(hint or f"missing artifact {path.name}: run the '{stage}' stage first")
    return path


def _require_input(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise StageError(f"{what} not found at {path}")
    return path


def provider_for(cfg: PipelineConfig) -> HashingEmbeddingProvider:
    unify_cfg = cfg.section("unify")
    name = unify_cfg.get("provider", "test")
    if name != "test":
        raise ConfigError(f"unsupported embedding provider {name!r} (only 'test' is built in)")
    return HashingEmbeddingProvider(int(unify_cfg.get("dimension", 64)))


def unifier_for(cfg: PipelineConfig) -> Unifier | None:
    path = cfg.path("unify", "dictionaries", required=False)
    if path is None:
        return None
    dicts = load_dictionaries(read_json(_require_input(path, "dictionaries file")))
    threshold = float(cfg.section("unify").get("threshold", 0.55))
    return Unifier(dicts, provider_for(cfg), UnifyConfig(threshold))


def layout_key(doi: str) -> str:
    return re.sub(r"[^a-z0-9._-]+", "_", doi.lower().strip())


# -- stages -----------------------------------------------------------------


def stage_records(cfg: PipelineConfig) -> None:
    sources = cfg.section("records").get("sources")
    if not sources:
        raise ConfigError("records.sources must list at least one JSONL file")
    lists = [load_records(_require_input(cfg.base_dir / s, "record source")) for s in sources]
    merged = merge_and_deduplicate(lists)
    enrichment = cfg.path("records", "enrichment", required=False)
    if enrichment is not None:
        entries = [EnrichmentEntry.from_dict(r) for r in read_jsonl(_require_input(enrichment, "enrichment file"))]
        merged = enrich_all(merged, entries)
    save_records(cfg.artifact("records"), merged)


def stage_fetch(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "records"))
    sec = cfg.section("fetch")
    transport = fetcher.FixtureTransport(_require_input(cfg.path("fetch", "fixtures"), "fetch fixtures"))
    clock = fetcher.SimulatedClock() if sec.get("clock", "real") == "simulated" else fetcher.SystemClock()
    tasks = [fetcher.FetchTask(i, r.doi, r.title) for i, r in enumerate(records) if r.doi.strip()]
    pdf_dir = cfg.workdir / "pdfs"
    outcomes = fetcher.rate_limited_execute(
        tasks,
        fetcher.RateLimit(int(sec.get("qps", 8))),
        int(sec.get("concurrency", 1)),
        transport,
        clock,
        pdf_dir,
    )
    # Paths are stored relative to the work directory so artifacts do not
    # depend on where the pipeline ran.
    rows, saved = [], []
    for o in outcomes:
        row = o.to_dict()
        if o.status == fetcher.STATUS_SAVED:
            row["pdf_path"] = Path(o.pdf_path).relative_to(cfg.workdir).as_posix()
            rec = records[o.row_idx]
            rec.pdf_path = row["pdf_path"]
            saved.append(rec)
        rows.append(row)
    write_jsonl(cfg.workdir / "outcomes.jsonl", rows)
    save_records(cfg.artifact("fetch"), saved)


def layout_config_from(overrides: Mapping[str, Any]) -> layout.LayoutConfig:
    known = {f.name for f in fields(layout.LayoutConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown layout settings: {', '.join(sorted(bad))}")
    return layout.LayoutConfig(**overrides)


def assemble_text(pages: Sequence[layout.Page]) -> tuple[str, list[str], list[str]]:
    """Body text, table texts and equation texts in reading order."""
    body, tables, equations = [], [], []
    for page in pages:
        for c in sorted(page.clusters, key=lambda c: (c.bbox.t, c.bbox.l, c.id)):
            text = " ".join(cell.text for cell in layout.collect_all_cells(c)).strip()
            if not text or c.label in _BODY_EXCLUDED_LABELS:
                continue
            if c.label == layout.FORMULA:
                equations.append(text)
            elif c.label in layout.LARGE_WRAPPER_LABELS:
                tables.append(text)
            else:
                body.append(text)
    return "\n\n".join(body), tables, equations


def stage_layout(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "fetch"))
    pages_dir = cfg.path("layout", "pages", required=False)
    if pages_dir is None or not pages_dir.is_dir():
        raise StageError("no page cluster JSON found: run layout input preparation first")
    lcfg = layout_config_from(cfg.section("layout").get("config", {}))
    out_dir = cfg.workdir / "layout"
    parsed = []
    for rec in records:
        key = layout_key(rec.doi)
        src = pages_dir / f"{key}.json"
        if not src.exists():
            rec.error = "no page cluster JSON"
            parsed.append(rec)
            continue
        data = read_json(src)
        raw_pages = data["pages"] if "pages" in data else [data]
        fixed_pages, masks = [], []
        for raw in raw_pages:
            page, mask = layout.fix_page(layout.Page.from_dict(raw), lcfg)
            fixed_pages.append(page)
            masks.append([m.to_dict() for m in mask])
        write_json(out_dir / f"{key}.json", {"pages": [p.to_dict() for p in fixed_pages], "masks": masks})
        body, tables, equations = assemble_text(fixed_pages)
        rec.full_text = body
        rec.tables_json = json.dumps(tables, ensure_ascii=False)
        rec.equations_json = json.dumps(equations, ensure_ascii=False)
        rec.token_count = len(body.split())
        parsed.append(rec)
    save_records(cfg.artifact("layout"), parsed)


def stage_extraction(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "layout"))
    specs = load_field_specs(read_json(_require_input(cfg.path("extraction", "fields"), "field spec file")))
    extractor = ScriptedExtractor.from_file(_require_input(cfg.path("extraction", "extractor"), "extractor script"))
    sec = cfg.section("extraction")
    chunk_spec = ChunkSpec(int(sec.get("max_tokens", 8000)), int(sec.get("overlap", 500)))
    cache = ExtractionCache()
    failures = {}
    for rec in records:
        result = extract_document(rec.full_text, specs, extractor, cache, chunk_spec)
        rec.extracted_fields = result.fields
        if result.failures:
            failures[rec.doi] = result.failures
    save_records(cfg.artifact("extraction"), records)
    write_json(cfg.workdir / "extraction_failures.json", failures)


def grid_from(grid: Mapping[str, Any]) -> list[LdaConfig]:
    axes = {}
    for name in ("num_topics", "alpha", "eta", "iterations", "seed"):
        if name in grid:
            value = grid[name]
            axes[name] = value if isinstance(value, list) else [value]
    if "num_topics" not in axes:
        raise ConfigError("topic grid must define num_topics")
    names = list(axes)
    return [LdaConfig(**dict(zip(names, combo))) for combo in itertools.product(*axes.values())]


def train_topics(texts: Sequence[str], grid: Mapping[str, Any], workers: int = 1) -> dict[str, Any]:
    """Preprocess, fuse phrases, grid-search LDA, and return the model JSON."""
    docs = [preprocess(t) for t in texts]
    docs = form_ngrams(
        docs, float(grid.get("bigram_threshold", 10.0)), float(grid.get("trigram_threshold", 10.0))
    )
    vocab = build_vocabulary(docs, int(grid.get("no_below", 1)), float(grid.get("no_above", 1.0)))
    if len(vocab) == 0:
        raise StageError("topic vocabulary is empty after filtering")
    top_n = int(grid.get("top_n", 10))
    result = grid_search(docs, vocab, grid_from(grid), top_n, workers=workers)
    out = model_to_dict(result.best, result.best_score.topic_coherences, top_n)
    out["grid"] = [
        {"num_topics": s.config.num_topics, "alpha": s.config.doc_prior, "coherence": s.coherence}
        for s in result.scores
    ]
    return out


def stage_topics(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "extraction"))
    sec = cfg.section("topics")
    grid_path = cfg.path("topics", "grid", required=False)
    grid = read_json(_require_input(grid_path, "topic grid")) if grid_path else dict(sec.get("grid", {}))
    out = train_topics([r.full_text or r.abstract for r in records], grid, int(sec.get("workers", 1)))
    out["dois"] = [r.doi for r in records]
    write_json(cfg.artifact("topics"), out)


def build_graph(
    records: Sequence[MetadataRecord],
    mappings: Mapping[str, Any],
    unifier: Unifier | None = None,
    topics: Mapping[str, Any] | None = None,
) -> Graph:
    """Article nodes plus mapped entity edges; ``topics`` is the topic model JSON."""
    by_doi = {d: i for i, d in enumerate((topics or {}).get("dois", []))}
    g = Graph()
    for rec in records:
        if not rec.doi.strip():
            continue
        topic = None
        i = by_doi.get(rec.doi)
        if i is not None:
            t = topics["dominant_topics"][i]
            topic = {"dominant": t, "keywords": topics["top_words"][t][:5]}
        upsert_article(g, rec, topic)
        apply_field_mappings(g, rec, mappings, unifier)
    return g


def stage_graph(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "extraction"))
    topics = read_json(_require(cfg, "topics"))
    mappings = load_field_mappings(read_json(_require_input(cfg.path("graph", "mappings"), "field mappings")))
    g = build_graph(records, mappings, unifier_for(cfg), topics)
    cfg.artifact("graph").write_text(g.to_json(), encoding="utf-8")


def document_text(rec: MetadataRecord) -> str:
    header = [f"Title: {rec.title}", f"DOI: {rec.doi}", f"Journal: {rec.journal}", f"Citations: {rec.citation_count}"]
    parts = ["\n".join(header), rec.full_text]
    tables = json.loads(rec.tables_json or "[]")
    if tables:
        parts.append("\n".join(str(t) for t in tables))
    return "\n\n".join(p for p in parts if p)


CORE_METADATA = ("doi", "title", "journal", "in_text_citation")


def stage_index(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "extraction"))
    sec = cfg.section("index")
    spec = ChunkSpec(int(sec.get("max_tokens", 7000)), int(sec.get("overlap", 200)))
    provider = provider_for(cfg)
    metadata = {i: {k: getattr(r, k) for k in CORE_METADATA} for i, r in enumerate(records)}

    pdf_chunks = [
        (i, j, piece)
        for i, r in enumerate(records)
        for j, piece in enumerate(chunk_text(document_text(r), spec))
    ]
    write_jsonl(cfg.artifact("index"), ({"doc_idx": i, "chunk_idx": j, "text": t} for i, j, t in pdf_chunks))
    struct_chunks = []
    for i, r in enumerate(records):
        content = structured_content({"Title": r.title, **r.extracted_fields})
        struct_chunks.append((i, 0, content))

    coll_dir = cfg.workdir / "collections"
    for name, chunks in ((cfg.pdf_collection, pdf_chunks), (cfg.structured_collection, struct_chunks)):
        coll = Collection(name, provider.dimension)
        coll.upsert_batch(build_points(chunks, provider, metadata))
        coll.save(coll_dir / f"{name}.jsonl")


def load_collections(cfg: PipelineConfig) -> dict[str, Collection]:
    _require(cfg, "index")
    coll_dir = cfg.workdir / "collections"
    dim = provider_for(cfg).dimension
    return {
        FAMILY_PDF: Collection.load(coll_dir / f"{cfg.pdf_collection}.jsonl", cfg.pdf_collection, dim),
        FAMILY_STRUCTURED: Collection.load(
            coll_dir / f"{cfg.structured_collection}.jsonl", cfg.structured_collection, dim
        ),
    }


def stage_ask(cfg: PipelineConfig) -> None:
    records = load_records(_require(cfg, "extraction"))
    graph = Graph.from_dict(read_json(_require(cfg, "graph")))
    collections = load_collections(cfg)
    unifier = unifier_for(cfg)
    provider = provider_for(cfg)
    canonical = canonical_table(records)
    sec = cfg.section("ask")
    fusion = FusionConfig(int(sec.get("K", 60)), int(sec.get("top_k", 20)))
    loop_cfg = LoopConfig(int(sec.get("max_iterations", 3)))
    sessions_root = cfg.workdir / "sessions"

    summary = []
    for q in sec.get("queries", []):
        agents = ScriptedAgents.from_file(_require_input(cfg.base_dir / q["agents"], "agent script"))
        summary.append(
            ask(q["query"], cfg.kb_prefix, agents, provider, collections, graph, unifier, canonical, fusion, loop_cfg, sessions_root)
        )
    write_json(cfg.artifact("ask"), summary)


def ask(
    query: str,
    kb_name: str,
    agents: ScriptedAgents,
    provider,
    collections: Mapping[str, Collection],
    graph: Graph | None,
    unifier: Unifier | None,
    canonical: Mapping[str, MetadataRecord],
    fusion: FusionConfig = FusionConfig(),
    loop_cfg: LoopConfig = LoopConfig(),
    sessions_root: Path | None = None,
    context_size: int = 8,
) -> dict[str, Any]:
    """Enhance, retrieve, run the QA loop, verify, and log one query."""
    enh = enhance_query(query, agents, unifier, graph)
    query_vec = provider.embed_batch([enh.enhanced_query])[0]
    retrieval = hybrid_retrieve(query_vec, enh.keywords, enh.entities, collections, graph, fusion, context_size)
    retrieved = retrieval.chunks
    log = SessionLog(kb_name, query, enh.enhanced_query, enh.keywords, enh.entities, retrieval.to_dict())
    log.retrieval["graph_context"] = enh.context

    def verifier(answer):
        return [verify_observation(o, canonical, retrieved) for o in answer.observations]

    context = {"chunks": [c.to_dict() for c in retrieved], "graph": enh.context}
    try:
        result = run_loop(query, context, agents, loop_cfg, verifier, log)
        triplets = result.triplets
    except LoopAborted as exc:
        log, triplets = exc.log, []
    folder = None
    if sessions_root is not None:
        folder = write_session(sessions_root, log, triplets)
    return {
        "query": query,
        "session": str(folder.relative_to(sessions_root.parent)) if folder else None,
        "iterations": len(log.iterations),
        "validated": log.validated,
        "triplets": len(triplets),
        "error": log.error,
        "reports": [r.to_dict() for r in log.verification],
    }


STAGE_FUNCS: dict[str, Callable[[PipelineConfig], None]] = {
    "records": stage_records,
    "fetch": stage_fetch,
    "layout": stage_layout,
    "extraction": stage_extraction,
    "topics": stage_topics,
    "graph": stage_graph,
    "index": stage_index,
    "ask": stage_ask,
}


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] | None = None) -> list[str]:
    """Run the requested stages in pipeline order; returns the stages run.

    A failing stage raises :class:`StageError` and leaves earlier artifacts
    in place.
    """
    requested = list(stages) if stages else list(STAGES)
    unknown = [s for s in requested if s not in STAGE_FUNCS]
    if unknown:
        raise ConfigError(f"unknown stages: {', '.join(unknown)}")
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    ran = []
    for name in STAGES:
        if name not in requested:
            continue
        logger.info("running stage %s", name)
        try:
            STAGE_FUNCS[name](cfg)
        except (StageError, ConfigError):
            raise
        except Exception as exc:
            raise StageError(f"stage {name} failed: {exc}") from exc
        ran.append(name)
    return ran
