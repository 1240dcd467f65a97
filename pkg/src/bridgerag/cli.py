"""Command-line interface: build, extend, query, evaluate, inspect.

Configuration precedence is command-line flag over config-file value over
built-in default. Credentials come only from the environment
(``BRIDGERAG_API_KEY``); ``BRIDGERAG_ENDPOINT`` overrides the endpoint.
Human-readable output goes to stdout, warnings and logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import figures
from .evaluation import load_dataset, run_eval, write_report
from .gateway import GatewayConfig, GatewayError, MockGateway, OpenAIGateway
from .indexer import (
    ExtractionError,
    STORE_FILENAME,
    add_document,
    build_index,
    load_index,
    save_index,
)
from .model import Document, IndexConfig, load_corpus
from .query import QueryConfig, answer_query
from .store import PersistenceError, StoreError, VectorStore

logger = logging.getLogger(__name__)

ENV_API_KEY = "BRIDGERAG_API_KEY"
ENV_ENDPOINT = "BRIDGERAG_ENDPOINT"

DEFAULTS: dict = {
    "corpus": None,
    "index": None,
    "dataset": None,
    "out": None,
    "doc": None,
    "endpoint": None,
    "mock_script": None,
    "chat_model": "gpt-4o-mini",
    "embed_model": "text-embedding-3-small",
    "tau": 10,
    "stage1": "qa_extraction",
    "max_source_docs": 5,
    "max_facts_per_doc": 8,
    "chunk_target_words": 100,
    "chunk_overlap_chars": 80,
    "parallelism": 4,
    "n_candidates": 20,
    "k": 10,
    "kb": "3",
    "mode": "single_pass",
    "ircot_steps": 3,
    "ircot_per_step": 20,
    "limit": None,
    "figures": True,
}


def resolve_config(flags: dict, config_path: str | None) -> dict:
    """Merge defaults, config-file values, and explicit flags (in that order)."""
    merged = dict(DEFAULTS)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            logger.warning("ignoring unknown config keys: %s", ", ".join(sorted(unknown)))
        merged.update({k: v for k, v in file_cfg.items() if k in DEFAULTS})
    merged.update({k: v for k, v in flags.items() if k in DEFAULTS and v is not None})
    env_endpoint = os.environ.get(ENV_ENDPOINT)
    if env_endpoint:
        merged["endpoint"] = env_endpoint
    return merged


def build_gateway(cfg: dict):
    mock_script = cfg.get("mock_script")
    endpoint = cfg.get("endpoint")
    if mock_script and endpoint:
        raise ValueError("configure either a mock script or a live endpoint, not both")
    if mock_script:
        return MockGateway.from_script(mock_script)
    if endpoint:
        return OpenAIGateway(
            GatewayConfig(
                endpoint=endpoint,
                api_key=os.environ.get(ENV_API_KEY, ""),
                chat_model=cfg["chat_model"],
                embed_model=cfg["embed_model"],
            )
        )
    raise ValueError(
        "no model gateway configured: pass --mock-script or --endpoint "
        f"(or set {ENV_ENDPOINT})"
    )


def index_config_from(cfg: dict) -> IndexConfig:
    return IndexConfig(
        tau=int(cfg["tau"]),
        max_source_docs=int(cfg["max_source_docs"]),
        max_facts_per_doc=int(cfg["max_facts_per_doc"]),
        stage1_strategy=cfg["stage1"],
        chunk_target_words=int(cfg["chunk_target_words"]),
        chunk_overlap_chars=int(cfg["chunk_overlap_chars"]),
        parallelism=int(cfg["parallelism"]),
    )


def parse_kb_values(raw) -> list[int]:
    if isinstance(raw, int):
        return [raw]
    values = [int(part) for part in str(raw).split(",") if part.strip() != ""]
    if not values:
        raise ValueError("--kb needs at least one integer")
    return values


def query_config_from(cfg: dict, k_b: int) -> QueryConfig:
    return QueryConfig(
        n_candidates=int(cfg["n_candidates"]),
        k=int(cfg["k"]),
        k_b=k_b,
        mode=cfg["mode"],
        ircot_steps=int(cfg["ircot_steps"]),
        ircot_per_step=int(cfg["ircot_per_step"]),
    )


def _require(cfg: dict, key: str, flag: str) -> str:
    value = cfg.get(key)
    if not value:
        raise ValueError(f"missing required {flag}")
    return value


def cmd_index(cfg: dict) -> int:
    corpus_path = _require(cfg, "corpus", "--corpus")
    index_dir = _require(cfg, "index", "--index")
    if not Path(corpus_path).exists():
        raise ValueError(f"corpus path not readable: {corpus_path}")
    corpus = load_corpus(corpus_path)
    gateway = build_gateway(cfg)
    index = build_index(corpus, index_config_from(cfg), gateway)
    save_index(index, index_dir)
    stats = index.stats
    print(f"indexed {len(corpus)} documents -> {index_dir}")
    print(f"bridge entities: {stats.bridge_entity_count}")
    print(f"bridging facts: {stats.bridging_fact_count}")
    print(f"non-empty rate: {stats.non_empty_rate:.2f}")
    return 0


def _load_document(path: str) -> Document:
    with open(path, encoding="utf-8") as fh:
        rec = json.loads(fh.readline() if path.endswith(".jsonl") else fh.read())
    return Document(
        doc_id=str(rec["doc_id"]), title=str(rec.get("title", "")), text=str(rec["text"])
    )


def cmd_add(cfg: dict) -> int:
    index_dir = _require(cfg, "index", "--index")
    doc_path = _require(cfg, "doc", "document path")
    index = load_index(index_dir)
    doc = _load_document(doc_path)
    gateway = build_gateway(cfg)
    result = add_document(index, doc, gateway)
    save_index(index, index_dir)
    print(f"added document {result.doc_id} ({len(result.added_entry_ids)} new entries)")
    print(f"rebridged entities: {', '.join(result.rebridged) or 'none'}")
    print(f"unbridged entities: {', '.join(result.unbridged) or 'none'}")
    return 0


def cmd_query(cfg: dict, question: str, as_json: bool) -> int:
    index_dir = _require(cfg, "index", "--index")
    store = VectorStore.load(Path(index_dir) / STORE_FILENAME)
    gateway = build_gateway(cfg)
    kb_values = parse_kb_values(cfg["kb"])
    if len(kb_values) != 1:
        raise ValueError("query takes a single --kb value")
    k_b = kb_values[0]
    result = answer_query(question, query_config_from(cfg, k_b), gateway, store)
    if as_json:
        print(json.dumps(result.to_dict(), ensure_ascii=False, indent=2))
        return 0
    print(f"answer: {result.answer}")
    print(f"llm_calls: {result.llm_calls}")
    print(f"retrieval_latency_s: {result.retrieval_latency:.4f}")
    if result.steps_trace is not None:
        for i, (reasoning, search) in enumerate(result.steps_trace, 1):
            print(f"step {i}: {reasoning} -> {search}")
    print("context:")
    for i, entry in enumerate(result.selected_context, 1):
        print(f"  [{i}] ({entry.kind}) {entry.text}")
    return 0


def _print_aggregate_row(label: str, agg: dict) -> None:
    print(
        f"{label:<6} {agg['em']:>6.1f} {agg['acc']:>6.1f} {agg['f1']:>6.1f} "
        f"{agg['recall_at_k']:>9.1f} {agg['mean_llm_calls']:>6.2f} "
        f"{agg['mean_retrieval_latency']:>8.4f}"
    )


def cmd_eval(cfg: dict) -> int:
    index_dir = _require(cfg, "index", "--index")
    dataset_path = _require(cfg, "dataset", "--dataset")
    out_dir = Path(_require(cfg, "out", "--out"))
    store = VectorStore.load(Path(index_dir) / STORE_FILENAME)
    questions = load_dataset(dataset_path)
    if cfg.get("limit"):
        questions = questions[: int(cfg["limit"])]
    gateway = build_gateway(cfg)
    kb_values = parse_kb_values(cfg["kb"])

    print(f"{'k_b':<6} {'EM':>6} {'Acc':>6} {'F1':>6} {'Recall@k':>9} {'Calls':>6} {'Time(s)':>8}")
    reports = {}
    for k_b in kb_values:
        report = run_eval(questions, query_config_from(cfg, k_b), gateway, store)
        target = out_dir if len(kb_values) == 1 else out_dir / f"kb_{k_b}"
        write_report(report, target)
        if cfg["figures"]:
            figures.plot_metric_summary(report, target / "metrics.png")
            if report.per_type:
                figures.plot_type_breakdown(report, target / "by_type.png")
        reports[k_b] = report
        _print_aggregate_row(str(k_b), report.aggregates)
    if len(kb_values) > 1 and cfg["figures"]:
        out_dir.mkdir(parents=True, exist_ok=True)
        figures.plot_kb_sweep(reports, out_dir / "kb_sweep.png")
    print(f"reports written to {out_dir}")
    return 0


def cmd_inspect(cfg: dict) -> int:
    index_dir = _require(cfg, "index", "--index")
    index = load_index(index_dir)
    counts = index.store.counts_by_kind()
    stats = index.stats
    print(f"index: {index_dir}")
    print(
        f"entries: {len(index.store)} "
        f"(aku {counts.get('aku', 0)}, bridging {counts.get('bridging', 0)})"
    )
    print(f"dimension: {index.store.dimension}")
    print(f"documents: {len(index.doc_ids)}")
    print(f"bridge entities: {stats.bridge_entity_count}")
    print(f"bridging facts: {stats.bridging_fact_count}")
    print(f"non-empty rate: {stats.non_empty_rate:.2f}")
    return 0


def _add_gateway_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file mirroring the flag names")
    parser.add_argument("--mock-script", dest="mock_script", help="scripted mock gateway JSON")
    parser.add_argument("--endpoint", help="OpenAI-compatible base URL")
    parser.add_argument("--chat-model", dest="chat_model")
    parser.add_argument("--embed-model", dest="embed_model")
    parser.add_argument("--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgerag",
        description="Bridging-fact indexing and single-pass multi-hop retrieval QA.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build an index from a corpus")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.add_argument("--tau", type=int)
    p.add_argument("--stage1", choices=["qa_extraction", "summary", "chunking"])
    p.add_argument("--max-source-docs", dest="max_source_docs", type=int)
    p.add_argument("--max-facts-per-doc", dest="max_facts_per_doc", type=int)
    p.add_argument("--chunk-target-words", dest="chunk_target_words", type=int)
    p.add_argument("--chunk-overlap-chars", dest="chunk_overlap_chars", type=int)
    p.add_argument("--parallelism", type=int)
    _add_gateway_flags(p)

    p = sub.add_parser("add", help="incrementally add one document")
    p.add_argument("doc", help="JSON file with doc_id/title/text")
    p.add_argument("--index")
    _add_gateway_flags(p)

    p = sub.add_parser("query", help="answer one question")
    p.add_argument("question")
    p.add_argument("--index")
    p.add_argument("--mode", choices=["single_pass", "ircot"])
    p.add_argument("--k", type=int)
    p.add_argument("--kb")
    p.add_argument("--n-candidates", dest="n_candidates", type=int)
    p.add_argument("--ircot-steps", dest="ircot_steps", type=int)
    p.add_argument("--ircot-per-step", dest="ircot_per_step", type=int)
    p.add_argument("--json", action="store_true", help="emit the result as JSON")
    _add_gateway_flags(p)

    p = sub.add_parser("eval", help="run the evaluation harness")
    p.add_argument("--index")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--mode", choices=["single_pass", "ircot"])
    p.add_argument("--k", type=int)
    p.add_argument("--kb", help="bridging budget; comma-separated values sweep")
    p.add_argument("--n-candidates", dest="n_candidates", type=int)
    p.add_argument("--ircot-steps", dest="ircot_steps", type=int)
    p.add_argument("--ircot-per-step", dest="ircot_per_step", type=int)
    p.add_argument("--limit", type=int, help="evaluate only the first N questions")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    _add_gateway_flags(p)

    p = sub.add_parser("inspect", help="print index statistics")
    p.add_argument("--index")
    _add_gateway_flags(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(flags, getattr(args, "config", None))
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "add":
            return cmd_add(cfg)
        if args.command == "query":
            return cmd_query(cfg, args.question, args.json)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "inspect":
            return cmd_inspect(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except (
        ValueError,
        OSError,
        GatewayError,
        ExtractionError,
        StoreError,
        PersistenceError,
        KeyError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
