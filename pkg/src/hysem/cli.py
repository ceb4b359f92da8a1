"""Command-line entry point: one subcommand per stage plus ``pipeline``.

Exit codes: 0 success, 1 stage error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import fetcher, layout
from .chunking import ChunkSpec, chunk_text
from .extraction import ExtractionCache, ScriptedExtractor, extract_document, load_field_specs
from .graph import Graph, MethodQuery, load_field_mappings, query_method_distribution
from .index import KEYWORD, Collection, FusionConfig, RankedList, build_points, rrf_fuse
from .jsonio import dumps, read_json, read_jsonl, write_json, write_jsonl
from .pipeline import (
    STAGES,
    ConfigError,
    PipelineConfig,
    StageError,
    ask,
    build_graph,
    layout_config_from,
    load_collections,
    run_pipeline,
    train_topics,
)
from .qaloop import ScriptedAgents
from .records import EnrichmentEntry, enrich_all, load_records, merge_and_deduplicate, save_records
from .unify import HashingEmbeddingProvider, Unifier, UnifyConfig, load_dictionaries
from .verify import Observation, RetrievedChunk, canonical_table, verify_observation

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2

logger = logging.getLogger("hysem")


class UsageError(Exception):
    pass


def _emit(obj: Any) -> None:
    sys.stdout.write(dumps(obj, indent=2) + "\n")


def _input(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {p}")
    return p


def _provider(name: str, dim: int) -> HashingEmbeddingProvider:
    if name != "test":
        raise UsageError(f"unsupported embedding provider {name!r} (only 'test' is built in)")
    return HashingEmbeddingProvider(dim)


def _unifier(dicts_path: str | None, dim: int, threshold: float = 0.55) -> Unifier | None:
    if not dicts_path:
        return None
    dicts = load_dictionaries(read_json(_input(dicts_path)))
    return Unifier(dicts, HashingEmbeddingProvider(dim), UnifyConfig(threshold))


# -- records -----------------------------------------------------------------


def cmd_records_merge(args: argparse.Namespace) -> int:
    merged = merge_and_deduplicate([load_records(_input(p)) for p in args.inputs])
    n = save_records(args.out, merged)
    print(f"wrote {n} records to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_records_enrich(args: argparse.Namespace) -> int:
    records = load_records(_input(args.inputs[0]))
    entries = [EnrichmentEntry.from_dict(r) for r in read_jsonl(_input(args.enrichment))]
    out = args.out or args.inputs[0]
    n = save_records(out, enrich_all(records, entries))
    print(f"wrote {n} records to {out}", file=sys.stderr)
    return EXIT_OK


# -- fetch -------------------------------------------------------------------


def cmd_fetch(args: argparse.Namespace) -> int:
    records = load_records(_input(args.inputs))
    transport = fetcher.FixtureTransport(_input(args.fixtures))
    clock = fetcher.SimulatedClock() if args.simulated_clock else fetcher.SystemClock()
    tasks = [fetcher.FetchTask(i, r.doi, r.title) for i, r in enumerate(records) if r.doi.strip()]
    outcomes = fetcher.rate_limited_execute(
        tasks, fetcher.RateLimit(args.qps), args.concurrency, transport, clock, args.pdf_dir
    )
    write_jsonl(args.out, (o.to_dict() for o in outcomes))
    saved = sum(o.status == fetcher.STATUS_SAVED for o in outcomes)
    print(f"{saved}/{len(outcomes)} PDFs saved", file=sys.stderr)
    return EXIT_OK


# -- layout ------------------------------------------------------------------


def cmd_layout_fix(args: argparse.Namespace) -> int:
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(layout.LayoutConfig)
        if getattr(args, f.name) is not None
    }
    try:
        cfg = layout_config_from(overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = read_json(_input(args.inputs))
    pages = data["pages"] if isinstance(data, dict) and "pages" in data else [data]
    fixed, masks = [], []
    for raw in pages:
        page, mask = layout.fix_page(layout.Page.from_dict(raw), cfg)
        fixed.append(page.to_dict())
        masks.append([m.to_dict() for m in mask])
    multi = "pages" in data
    write_json(args.out, {"pages": fixed} if multi else fixed[0])
    if args.emit_masks:
        write_json(args.emit_masks, masks if multi else masks[0])
    return EXIT_OK


# -- chunk / extract ---------------------------------------------------------


def _record_text(row: dict[str, Any]) -> str:
    return row.get("full_text") or row.get("text") or row.get("abstract") or ""


def cmd_chunk(args: argparse.Namespace) -> int:
    spec = ChunkSpec(args.max_tokens, args.overlap)
    rows = read_jsonl(_input(args.inputs))
    out = (
        {"doc_idx": i, "chunk_idx": j, "text": piece}
        for i, row in enumerate(rows)
        for j, piece in enumerate(chunk_text(_record_text(row), spec))
    )
    n = write_jsonl(args.out, out)
    print(f"wrote {n} chunks to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    records = load_records(_input(args.inputs))
    specs = load_field_specs(read_json(_input(args.fields)))
    extractor = ScriptedExtractor.from_file(_input(args.extractor))
    cache = ExtractionCache(args.cache)
    spec = ChunkSpec(args.max_tokens, args.overlap)
    failed = 0
    for rec in records:
        result = extract_document(rec.full_text, specs, extractor, cache, spec)
        rec.extracted_fields = result.fields
        failed += bool(result.failures)
    cache.save()
    out = args.out or args.inputs
    save_records(out, records)
    print(f"extracted {len(records)} records ({failed} with chunk failures)", file=sys.stderr)
    return EXIT_OK


# -- topics / unify / graph --------------------------------------------------


def cmd_topics_train(args: argparse.Namespace) -> int:
    rows = list(read_jsonl(_input(args.inputs)))
    model = train_topics([_record_text(r) for r in rows], read_json(_input(args.grid)), args.workers)
    model["dois"] = [r.get("doi", "") for r in rows]
    write_json(args.out, model)
    return EXIT_OK


def cmd_unify(args: argparse.Namespace) -> int:
    unifier = _unifier(args.dicts, args.dim, args.threshold)
    if args.key not in unifier.dicts:
        raise UsageError(f"unknown dictionary key {args.key!r}")
    _emit({"term": args.term, "key": args.key, "canonical": unifier.unify(args.term, args.key)})
    return EXIT_OK


def cmd_graph_build(args: argparse.Namespace) -> int:
    records = load_records(_input(args.inputs))
    mappings = load_field_mappings(read_json(_input(args.mappings)))
    topics = read_json(_input(args.topics)) if args.topics else None
    g = build_graph(records, mappings, _unifier(args.dicts, args.dim), topics)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(g.to_json(), encoding="utf-8")
    print(f"graph: {len(g.nodes)} nodes, {len(g.edges)} edges", file=sys.stderr)
    return EXIT_OK


def cmd_graph_query_methods(args: argparse.Namespace) -> int:
    g = Graph.from_dict(read_json(_input(args.inputs)))
    criteria = MethodQuery()
    if args.pollutant:
        criteria = dataclasses.replace(criteria, pollutant_substring=args.pollutant)
    _emit([{"method": m, "count": n} for m, n in query_method_distribution(g, criteria)])
    return EXIT_OK


# -- index -------------------------------------------------------------------


def cmd_index_build(args: argparse.Namespace) -> int:
    provider = _provider(args.provider, args.dim)
    chunks = [(int(r["doc_idx"]), int(r["chunk_idx"]), r["text"]) for r in read_jsonl(_input(args.chunks))]
    coll = Collection(args.name, args.dim)
    coll.upsert_batch(build_points(chunks, provider, batch_size=args.batch_size))
    out = Path(args.out) if args.out else Path(f"{args.name}.jsonl")
    coll.save(out)
    print(f"{args.name}: {len(coll)} points -> {out}", file=sys.stderr)
    return EXIT_OK


def cmd_index_query(args: argparse.Namespace) -> int:
    coll = Collection.load(_input(args.collection), dimension=args.dim)
    provider = _provider(args.provider, args.dim)
    semantic = coll.semantic_search(provider.embed(args.text), args.k)
    if not args.fuse:
        _emit([{"id": i, "score": s} for i, s in zip(semantic.entries, semantic.scores)])
        return EXIT_OK
    hits: list[int] = []
    for word in args.keywords or args.text.split():
        for pid in coll.keyword_search(word, args.k).entries:
            if pid not in hits:
                hits.append(pid)
    fused = rrf_fuse([semantic, RankedList(KEYWORD, hits)], FusionConfig(args.rrf_k, args.k))
    _emit([{"id": i, "score": s} for i, s in fused[: args.k]])
    return EXIT_OK


# -- ask / verify ------------------------------------------------------------


def cmd_ask(args: argparse.Namespace) -> int:
    cfg = PipelineConfig(args.kb, Path("."), Path(args.workdir))
    cfg.stages["unify"] = {"dimension": args.dim}
    records = load_records(_input(str(cfg.artifact("extraction"))))
    graph = Graph.from_dict(read_json(_input(str(cfg.artifact("graph")))))
    summary = ask(
        args.query,
        args.kb,
        ScriptedAgents.from_file(_input(args.agents)),
        HashingEmbeddingProvider(args.dim),
        load_collections(cfg),
        graph,
        _unifier(args.dicts, args.dim),
        canonical_table(records),
        sessions_root=Path(args.sessions or Path(args.workdir) / "sessions"),
    )
    _emit(summary)
    return EXIT_OK


def _observations(data: Any) -> list[Observation]:
    if isinstance(data, dict):
        if "answer" in data and isinstance(data["answer"], dict):
            data = data["answer"]
        data = data.get("observations", [])
    return [Observation.from_dict(o) for o in data]


def _retrieved(data: Any) -> list[RetrievedChunk]:
    if isinstance(data, dict):
        data = data.get("chunks", [])
    return [RetrievedChunk.from_dict(c) for c in data]


def cmd_verify(args: argparse.Namespace) -> int:
    observations = _observations(read_json(_input(args.answers)))
    canonical = canonical_table(load_records(_input(args.canonical)))
    retrieved = _retrieved(read_json(_input(args.retrieved)))
    reports = [verify_observation(o, canonical, retrieved).to_dict() for o in observations]
    if args.out:
        write_json(args.out, reports)
    else:
        _emit(reports)
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config, args.workdir)
    stages = args.stages.split(",") if args.stages else None
    ran = run_pipeline(cfg, stages)
    print(f"completed stages: {', '.join(ran)} (artifacts in {cfg.workdir})", file=sys.stderr)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_layout_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(layout.LayoutConfig):
        kind = {"float": float, "int": int}.get(str(f.type), str)
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                       help=f"override {f.name} (default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hysem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    rec = sub.add_parser("records", help="merge and enrich metadata records").add_subparsers(dest="action", required=True)
    p = rec.add_parser("merge")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_records_merge)
    p = rec.add_parser("enrich")
    p.add_argument("--in", dest="inputs", nargs=1, required=True)
    p.add_argument("--enrichment", required=True)
    p.add_argument("--out", help="defaults to rewriting --in")
    p.set_defaults(func=cmd_records_enrich)

    p = sub.add_parser("fetch", help="rate-limited open-access PDF acquisition")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--fixtures", required=True, help="fixture transport directory")
    p.add_argument("--qps", type=int, default=8)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--pdf-dir", default="pdfs")
    p.add_argument("--simulated-clock", action="store_true", help="do not sleep in real time")
    p.set_defaults(func=cmd_fetch)

    lay = sub.add_parser("layout", help="layout post-processing").add_subparsers(dest="action", required=True)
    p = lay.add_parser("fix")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-masks")
    _add_layout_flags(p)
    p.set_defaults(func=cmd_layout_fix)

    p = sub.add_parser("chunk", help="overlapping token windows")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--max-tokens", type=int, default=7000)
    p.add_argument("--overlap", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("extract", help="chunked structured-field extraction")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--fields", required=True)
    p.add_argument("--extractor", required=True, help="scripted extractor JSON")
    p.add_argument("--out", help="defaults to rewriting --in")
    p.add_argument("--cache")
    p.add_argument("--max-tokens", type=int, default=8000)
    p.add_argument("--overlap", type=int, default=500)
    p.set_defaults(func=cmd_extract)

    top = sub.add_parser("topics", help="LDA topic modeling").add_subparsers(dest="action", required=True)
    p = top.add_parser("train")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_topics_train)

    p = sub.add_parser("unify", help="map a term to its canonical form")
    p.add_argument("--dicts", required=True)
    p.add_argument("--term", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--threshold", type=float, default=0.55)
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_unify)

    gr = sub.add_parser("graph", help="knowledge graph").add_subparsers(dest="action", required=True)
    p = gr.add_parser("build")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--mappings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dicts")
    p.add_argument("--topics")
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_graph_build)
    q = gr.add_parser("query").add_subparsers(dest="query", required=True)
    p = q.add_parser("methods")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--pollutant")
    p.set_defaults(func=cmd_graph_query_methods)

    ix = sub.add_parser("index", help="vector collections").add_subparsers(dest="action", required=True)
    p = ix.add_parser("build")
    p.add_argument("--chunks", required=True)
    p.add_argument("--provider", default="test")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--name", required=True)
    p.add_argument("--out")
    p.add_argument("--batch-size", type=int, default=25)
    p.set_defaults(func=cmd_index_build)
    p = ix.add_parser("query")
    p.add_argument("--collection", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--fuse", action="store_true", help="fuse semantic and keyword rankings")
    p.add_argument("--keywords", nargs="*")
    p.add_argument("--rrf-k", type=int, default=60)
    p.add_argument("--provider", default="test")
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_index_query)

    p = sub.add_parser("ask", help="answer a query against a built knowledge base")
    p.add_argument("--kb", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--agents", required=True, help="scripted agents JSON")
    p.add_argument("--workdir", default="work")
    p.add_argument("--dicts")
    p.add_argument("--sessions")
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("verify", help="verify cited observations")
    p.add_argument("--answers", required=True)
    p.add_argument("--canonical", required=True)
    p.add_argument("--retrieved", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pipeline", help="run stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.add_argument("--workdir", help="override the configured work directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, Exception) as exc:
        if args.verbose:
            logger.exception("stage failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
