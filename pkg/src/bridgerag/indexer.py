"""Offline indexing: fact extraction, bridge entities, bridging facts.

Stage 1 turns each document into an atomic knowledge unit (AKU) via one of
three strategies (QA extraction, summarization, or plain chunking). Stage 2
finds bridge entities, entities shared by 2..tau documents, and prompts the
model once per entity to generate cross-document bridging facts. Everything
is embedded into one unified vector store.

Incremental addition re-runs Stage 1 for the new document only and Stage 2
for the affected entities; the rest of the index is untouched.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .gateway import ChatRequest
from .model import (
    KIND_AKU,
    KIND_BRIDGING,
    STAGE1_CHUNKING,
    STAGE1_QA,
    STAGE1_SUMMARY,
    AtomicKnowledgeUnit,
    BridgingFact,
    Document,
    EntityTable,
    IndexConfig,
    IndexEntry,
    soft_normalize,
)
from .prompts import STAGE1_QA as TPL_QA
from .prompts import STAGE1_SUMMARY as TPL_SUMMARY
from .prompts import STAGE2_BRIDGE as TPL_BRIDGE
from .prompts import render_prompt
from .store import VectorStore

logger = logging.getLogger(__name__)

KNOWLEDGE_FORMAT_VERSION = 1

STORE_FILENAME = "store.jsonl"
KNOWLEDGE_FILENAME = "knowledge.json"
STATS_FILENAME = "stats.json"


class ExtractionError(RuntimeError):
    """A model response could not be turned into the expected structure."""


@dataclass(frozen=True)
class Stage1Result:
    aku: AtomicKnowledgeUnit
    raw_response: str


@dataclass(frozen=True)
class BridgeEntitySet:
    """Bridge entities with, per key, the ordered contributing doc ids."""

    members: Mapping[str, tuple[str, ...]]

    def __contains__(self, key: str) -> bool:
        return key in self.members

    def __len__(self) -> int:
        return len(self.members)

    def keys(self) -> tuple[str, ...]:
        return tuple(self.members)

    def doc_ids_for(self, key: str) -> tuple[str, ...]:
        return self.members[key]


@dataclass(frozen=True)
class IndexStats:
    bridge_entity_count: int
    bridging_fact_count: int
    non_empty_rate: float

    def to_dict(self) -> dict:
        return {
            "bridge_entity_count": self.bridge_entity_count,
            "bridging_fact_count": self.bridging_fact_count,
            "non_empty_rate": self.non_empty_rate,
        }


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*|\s*```$")


def _repair_json_text(text: str) -> str:
    """Strip code fences and any prose around the outermost JSON value."""
    text = _FENCE_RE.sub("", text.strip())
    starts = [i for i in (text.find("{"), text.find("[")) if i != -1]
    if not starts:
        return text
    lo = min(starts)
    hi = max(text.rfind("}"), text.rfind("]"))
    return text[lo : hi + 1] if hi > lo else text


def parse_json_response(text: str, what: str):
    """Parse model output as JSON, with one repair retry before giving up."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return json.loads(_repair_json_text(text))
    except json.JSONDecodeError as exc:
        raise ExtractionError(f"{what}: unparseable JSON after repair: {exc}") from exc


def _document_prompt_text(doc: Document, config: IndexConfig) -> str:
    text = f"{doc.title}\n{doc.text}" if doc.title else doc.text
    if len(text) > config.max_doc_chars:
        logger.warning(
            "truncating document %s from %d to %d chars",
            doc.doc_id,
            len(text),
            config.max_doc_chars,
        )
        text = text[: config.max_doc_chars]
    return text


def extract_qa(doc: Document, gateway, config: IndexConfig) -> Stage1Result:
    """Stage 1, QA strategy: facts are the extracted answers, plus entities.

    Expects a JSON object of the form
    ``{"qa_pairs": [{"question": ..., "answer": ...}], "entities": [...]}``;
    only the answers are retained as facts.
    """
    prompt = render_prompt(TPL_QA, {"text": _document_prompt_text(doc, config)})
    raw = gateway.chat_complete(
        ChatRequest(user=prompt, max_tokens=config.index_max_tokens)
    )
    payload = parse_json_response(raw, f"doc {doc.doc_id}")
    if not isinstance(payload, dict):
        raise ExtractionError(f"doc {doc.doc_id}: expected a JSON object")
    pairs = payload.get("qa_pairs", [])
    facts = [
        str(p.get("answer", "")).strip()
        for p in pairs
        if isinstance(p, dict) and str(p.get("answer", "")).strip()
    ]
    if not facts:
        raise ExtractionError(f"doc {doc.doc_id}: extraction produced no facts")
    entities = [
        str(e).strip() for e in payload.get("entities", []) if str(e).strip()
    ]
    aku = AtomicKnowledgeUnit.from_facts(doc.doc_id, facts, entities)
    return Stage1Result(aku=aku, raw_response=raw)


def extract_summary(doc: Document, gateway, config: IndexConfig) -> Stage1Result:
    """Stage 1, summary strategy: one fact holding the whole summary.

    No entities are extracted, so Stage 2 is unavailable under this strategy.
    """
    prompt = render_prompt(TPL_SUMMARY, {"text": _document_prompt_text(doc, config)})
    raw = gateway.chat_complete(
        ChatRequest(user=prompt, max_tokens=config.index_max_tokens)
    )
    summary = raw.strip()
    if not summary:
        raise ExtractionError(f"doc {doc.doc_id}: empty summary")
    return Stage1Result(
        aku=AtomicKnowledgeUnit.from_facts(doc.doc_id, [summary]), raw_response=raw
    )


_WORD_RE = re.compile(r"\S+")


def chunk_document(
    doc: Document, target_words: int, overlap_chars: int
) -> list[AtomicKnowledgeUnit]:
    """Stage 1, chunking strategy: greedy word-boundary windows.

    Chunk bodies are exact slices of the original text cut at word starts
    every ``target_words`` words, so concatenating the bodies reconstructs
    the text. Each chunk after the first is prefixed with the final
    ``overlap_chars`` characters of the previous chunk, widened left to the
    nearest word boundary. No entities, so no bridging facts.
    """
    if target_words < 1:
        raise ValueError("target_words must be >= 1")
    if overlap_chars < 0:
        raise ValueError("overlap_chars must be >= 0")
    text = doc.text
    spans = [m.start() for m in _WORD_RE.finditer(text)]
    if not spans:
        raise ValueError(f"document {doc.doc_id!r} has no words")
    boundaries = [0] + [spans[i] for i in range(target_words, len(spans), target_words)]
    bodies = [
        text[boundaries[i] : boundaries[i + 1] if i + 1 < len(boundaries) else len(text)]
        for i in range(len(boundaries))
    ]
    chunks: list[str] = []
    for body in bodies:
        if not chunks or overlap_chars == 0:
            chunks.append(body)
            continue
        prev = chunks[-1]
        start = max(len(prev) - overlap_chars, 0)
        while start > 0 and not prev[start - 1].isspace():
            start -= 1
        chunks.append(prev[start:] + body)
    return [AtomicKnowledgeUnit.from_facts(doc.doc_id, [c]) for c in chunks]


def identify_bridge_entities(table: EntityTable, tau: int) -> BridgeEntitySet:
    """Entities whose document frequency lies in [2, tau], bounds inclusive.

    The lower bound ensures a bridge connects at least two documents; the
    upper bound excludes overly generic entities.
    """
    if tau < 2:
        raise ValueError("tau must be >= 2")
    members = {
        key: table.doc_ids_for(key)
        for key in table.keys()
        if 2 <= table.document_frequency(key) <= tau
    }
    return BridgeEntitySet(members=members)


def collect_entity_facts(aku: AtomicKnowledgeUnit, entity_key: str) -> list[str]:
    """Facts of the AKU whose normalized text contains the entity key."""
    return [f for f in aku.facts if entity_key in soft_normalize(f)]


def _select_source_docs(
    entity_key: str,
    doc_ids: Sequence[str],
    akus_by_doc: Mapping[str, Sequence[AtomicKnowledgeUnit]],
    config: IndexConfig,
) -> list[tuple[str, list[str]]]:
    """Pick up to max_source_docs docs, richest in matching facts first.

    Ties break by ascending doc_id; the per-document fact list is capped at
    max_facts_per_doc, in extraction order.
    """
    matched: list[tuple[str, list[str]]] = []
    for doc_id in doc_ids:
        facts: list[str] = []
        for aku in akus_by_doc.get(doc_id, ()):
            facts.extend(collect_entity_facts(aku, entity_key))
        matched.append((doc_id, facts))
    matched.sort(key=lambda item: (-len(item[1]), item[0]))
    return [
        (doc_id, facts[: config.max_facts_per_doc])
        for doc_id, facts in matched[: config.max_source_docs]
    ]


def _render_doc_sections(selected: Sequence[tuple[str, Sequence[str]]]) -> str:
    sections = []
    for i, (doc_id, facts) in enumerate(selected, 1):
        lines = [f"Document {i} ({doc_id}):"]
        lines.extend(f"- {fact}" for fact in facts)
        sections.append("\n".join(lines))
    return "\n\n".join(sections)


def generate_bridging_facts(
    entity_key: str,
    doc_ids: Sequence[str],
    akus_by_doc: Mapping[str, Sequence[AtomicKnowledgeUnit]],
    config: IndexConfig,
    gateway,
    entity_display: str | None = None,
) -> list[BridgingFact]:
    """Prompt the model once for an entity's cross-document bridging facts.

    Returns zero facts when the model reports no meaningful connection
    (an empty JSON array is a valid answer). Exact duplicate fact strings
    are dropped. Raises ExtractionError on unparseable output; callers
    treat that as "no facts" with a warning.
    """
    if len(doc_ids) < 2:
        raise ValueError(f"entity {entity_key!r} needs >= 2 source documents")
    selected = _select_source_docs(entity_key, doc_ids, akus_by_doc, config)
    prompt = render_prompt(
        TPL_BRIDGE,
        {
            "entity": entity_display or entity_key,
            "doc_sections": _render_doc_sections(selected),
        },
    )
    raw = gateway.chat_complete(
        ChatRequest(user=prompt, max_tokens=config.index_max_tokens)
    )
    payload = parse_json_response(raw, f"entity {entity_key}")
    if not isinstance(payload, list):
        raise ExtractionError(f"entity {entity_key}: expected a JSON array")
    provenance = frozenset(doc_id for doc_id, _ in selected)
    facts: list[BridgingFact] = []
    seen: set[str] = set()
    for item in payload:
        text = str(item).strip()
        if not text or text in seen:
            continue
        seen.add(text)
        facts.append(
            BridgingFact(
                fact_id=f"bridging:{entity_key}:{len(facts)}",
                entity=entity_key,
                text=text,
                source_doc_ids=provenance,
            )
        )
    return facts


@dataclass
class KnowledgeIndex:
    """The whole offline artifact: AKUs, entity table, bridging facts, store.

    ``bridging_facts`` keeps one entry per current bridge entity, with an
    empty list for entities that yielded no facts; that makes the non-empty
    rate recomputable at any time.
    """

    config: IndexConfig
    akus: list[AtomicKnowledgeUnit] = field(default_factory=list)
    entity_table: EntityTable = field(default_factory=EntityTable)
    bridging_facts: dict[str, list[BridgingFact]] = field(default_factory=dict)
    store: VectorStore = field(default_factory=VectorStore)

    @property
    def doc_ids(self) -> set[str]:
        return {aku.doc_id for aku in self.akus}

    def akus_by_doc(self) -> dict[str, list[AtomicKnowledgeUnit]]:
        grouped: dict[str, list[AtomicKnowledgeUnit]] = {}
        for aku in self.akus:
            grouped.setdefault(aku.doc_id, []).append(aku)
        return grouped

    @property
    def stats(self) -> IndexStats:
        n_entities = len(self.bridging_facts)
        n_facts = sum(len(v) for v in self.bridging_facts.values())
        non_empty = sum(1 for v in self.bridging_facts.values() if v)
        return IndexStats(
            bridge_entity_count=n_entities,
            bridging_fact_count=n_facts,
            non_empty_rate=(non_empty / n_entities) if n_entities else 0.0,
        )


def _run_stage1(
    docs: Sequence[Document], config: IndexConfig, gateway
) -> dict[str, list[AtomicKnowledgeUnit]]:
    """Stage 1 over many documents; failed docs are skipped with a warning."""

    def one(doc: Document) -> list[AtomicKnowledgeUnit]:
        if config.stage1_strategy == STAGE1_QA:
            return [extract_qa(doc, gateway, config).aku]
        if config.stage1_strategy == STAGE1_SUMMARY:
            return [extract_summary(doc, gateway, config).aku]
        return chunk_document(doc, config.chunk_target_words, config.chunk_overlap_chars)

    results: dict[str, list[AtomicKnowledgeUnit]] = {}

    def guarded(doc: Document) -> tuple[str, list[AtomicKnowledgeUnit] | None]:
        try:
            return doc.doc_id, one(doc)
        except ExtractionError as exc:
            logger.warning("skipping document %s: %s", doc.doc_id, exc)
            return doc.doc_id, None

    if config.parallelism > 1 and len(docs) > 1 and config.stage1_strategy != STAGE1_CHUNKING:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            outcomes = list(pool.map(guarded, docs))
    else:
        outcomes = [guarded(doc) for doc in docs]
    for doc_id, akus in outcomes:
        if akus is not None:
            results[doc_id] = akus
    return results


def _run_stage2(
    bridge: BridgeEntitySet,
    akus_by_doc: Mapping[str, Sequence[AtomicKnowledgeUnit]],
    table: EntityTable,
    config: IndexConfig,
    gateway,
) -> dict[str, list[BridgingFact]]:
    """Stage 2 per bridge entity, merged deterministically by key order."""

    def one(key: str) -> tuple[str, list[BridgingFact]]:
        try:
            facts = generate_bridging_facts(
                key,
                bridge.doc_ids_for(key),
                akus_by_doc,
                config,
                gateway,
                entity_display=table.display_for(key),
            )
        except ExtractionError as exc:
            logger.warning("entity %r skipped: %s", key, exc)
            facts = []
        return key, facts

    keys = sorted(bridge.keys())
    if config.parallelism > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            pairs = list(pool.map(one, keys))
    else:
        pairs = [one(key) for key in keys]
    return {key: facts for key, facts in sorted(pairs, key=lambda p: p[0])}


def _aku_entries(
    doc_id: str, akus: Sequence[AtomicKnowledgeUnit], vectors: Sequence[Sequence[float]]
) -> list[IndexEntry]:
    entries = []
    for i, (aku, vec) in enumerate(zip(akus, vectors)):
        entry_id = f"aku:{doc_id}" if len(akus) == 1 else f"aku:{doc_id}:{i:04d}"
        entries.append(
            IndexEntry(
                entry_id=entry_id,
                kind=KIND_AKU,
                text=aku.merged_text,
                embedding=tuple(vec),
                provenance=frozenset({doc_id}),
            )
        )
    return entries


def _bridging_entries(
    facts: Sequence[BridgingFact], vectors: Sequence[Sequence[float]]
) -> list[IndexEntry]:
    return [
        IndexEntry(
            entry_id=fact.fact_id,
            kind=KIND_BRIDGING,
            text=fact.text,
            embedding=tuple(vec),
            provenance=fact.source_doc_ids,
            entity=fact.entity,
        )
        for fact, vec in zip(facts, vectors)
    ]


def build_index(
    corpus: Sequence[Document], config: IndexConfig, gateway
) -> KnowledgeIndex:
    """Run the full offline pipeline over a corpus.

    Per-document and per-entity failures are skipped with warnings; the
    build fails only if no document extracts successfully.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    by_doc = _run_stage1(corpus, config, gateway)
    if not by_doc:
        raise ExtractionError("no documents extracted successfully")
    index = KnowledgeIndex(config=config)
    for doc in corpus:  # preserve corpus order
        index.akus.extend(by_doc.get(doc.doc_id, ()))
    index.entity_table = EntityTable.from_akus(index.akus)
    bridge = identify_bridge_entities(index.entity_table, config.tau)
    akus_by_doc = index.akus_by_doc()
    index.bridging_facts = _run_stage2(
        bridge, akus_by_doc, index.entity_table, config, gateway
    )

    texts: list[str] = []
    plan: list[tuple[str, list[AtomicKnowledgeUnit]]] = []
    for doc in corpus:
        akus = by_doc.get(doc.doc_id)
        if akus:
            plan.append((doc.doc_id, akus))
            texts.extend(a.merged_text for a in akus)
    all_facts = [f for key in sorted(index.bridging_facts) for f in index.bridging_facts[key]]
    texts.extend(f.text for f in all_facts)
    vectors = gateway.embed_batch(texts) if texts else []

    cursor = 0
    entries: list[IndexEntry] = []
    for doc_id, akus in plan:
        entries.extend(_aku_entries(doc_id, akus, vectors[cursor : cursor + len(akus)]))
        cursor += len(akus)
    entries.extend(_bridging_entries(all_facts, vectors[cursor:]))
    index.store.upsert(entries)
    return index


@dataclass(frozen=True)
class AddResult:
    """What changed during an incremental document addition."""

    doc_id: str
    rebridged: tuple[str, ...]  # entities (re)generated, including new ones
    unbridged: tuple[str, ...]  # entities whose facts were removed (df > tau)
    added_entry_ids: tuple[str, ...]


def add_document(index: KnowledgeIndex, doc: Document, gateway) -> AddResult:
    """Incrementally index one new document.

    Runs Stage 1 for the new document, then Stage 2 only for affected
    entities: existing bridge entities appearing in the document and
    newly formed ones whose document frequency reaches 2. Entities pushed
    above tau lose their bridging facts. The rest of the index is unchanged.
    """
    config = index.config
    if doc.doc_id in index.doc_ids:
        raise ValueError(f"doc_id {doc.doc_id!r} is already indexed")

    if config.stage1_strategy == STAGE1_QA:
        new_akus = [extract_qa(doc, gateway, config).aku]
    elif config.stage1_strategy == STAGE1_SUMMARY:
        new_akus = [extract_summary(doc, gateway, config).aku]
    else:
        new_akus = chunk_document(
            doc, config.chunk_target_words, config.chunk_overlap_chars
        )

    index.akus.extend(new_akus)
    new_keys: set[str] = set()
    for aku in new_akus:
        for raw in sorted(aku.entities):
            new_keys.add(index.entity_table.add(raw, doc.doc_id))

    akus_by_doc = index.akus_by_doc()
    rebridged: list[str] = []
    unbridged: list[str] = []
    new_facts: list[BridgingFact] = []
    for key in sorted(new_keys):
        df = index.entity_table.document_frequency(key)
        if 2 <= df <= config.tau:
            old = index.bridging_facts.get(key, [])
            if old:
                index.store.delete([f.fact_id for f in old])
            try:
                facts = generate_bridging_facts(
                    key,
                    index.entity_table.doc_ids_for(key),
                    akus_by_doc,
                    config,
                    gateway,
                    entity_display=index.entity_table.display_for(key),
                )
            except ExtractionError as exc:
                logger.warning("entity %r skipped: %s", key, exc)
                facts = []
            index.bridging_facts[key] = facts
            new_facts.extend(facts)
            rebridged.append(key)
        elif df > config.tau and key in index.bridging_facts:
            index.store.delete([f.fact_id for f in index.bridging_facts.pop(key)])
            unbridged.append(key)

    texts = [a.merged_text for a in new_akus] + [f.text for f in new_facts]
    vectors = gateway.embed_batch(texts) if texts else []
    entries = _aku_entries(doc.doc_id, new_akus, vectors[: len(new_akus)])
    entries.extend(_bridging_entries(new_facts, vectors[len(new_akus) :]))
    index.store.upsert(entries)
    return AddResult(
        doc_id=doc.doc_id,
        rebridged=tuple(rebridged),
        unbridged=tuple(unbridged),
        added_entry_ids=tuple(e.entry_id for e in entries),
    )


def save_index(index: KnowledgeIndex, path: str | Path) -> None:
    """Persist the index as a directory: store, knowledge sidecar, stats."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index.store.save(root / STORE_FILENAME)
    knowledge = {
        "format_version": KNOWLEDGE_FORMAT_VERSION,
        "config": index.config.__dict__,
        "akus": [
            {
                "doc_id": a.doc_id,
                "facts": list(a.facts),
                "entities": sorted(a.entities),
            }
            for a in index.akus
        ],
        "entity_table": index.entity_table.to_dict(),
        "bridging_facts": {
            key: [
                {
                    "fact_id": f.fact_id,
                    "text": f.text,
                    "source_doc_ids": sorted(f.source_doc_ids),
                }
                for f in facts
            ]
            for key, facts in sorted(index.bridging_facts.items())
        },
    }
    (root / KNOWLEDGE_FILENAME).write_text(
        json.dumps(knowledge, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    (root / STATS_FILENAME).write_text(
        json.dumps(index.stats.to_dict(), indent=2) + "\n", encoding="utf-8"
    )


def load_index(path: str | Path) -> KnowledgeIndex:
    root = Path(path)
    knowledge_path = root / KNOWLEDGE_FILENAME
    if not knowledge_path.exists():
        raise FileNotFoundError(f"no index at {root} (missing {KNOWLEDGE_FILENAME})")
    data = json.loads(knowledge_path.read_text(encoding="utf-8"))
    version = data.get("format_version")
    if version != KNOWLEDGE_FORMAT_VERSION:
        raise ValueError(f"unknown index format version {version!r} at {root}")
    config = IndexConfig.from_dict(data["config"])
    akus = [
        AtomicKnowledgeUnit.from_facts(a["doc_id"], a["facts"], a["entities"])
        for a in data["akus"]
    ]
    bridging = {
        key: [
            BridgingFact(
                fact_id=f["fact_id"],
                entity=key,
                text=f["text"],
                source_doc_ids=frozenset(f["source_doc_ids"]),
            )
            for f in facts
        ]
        for key, facts in data["bridging_facts"].items()
    }
    return KnowledgeIndex(
        config=config,
        akus=akus,
        entity_table=EntityTable.from_dict(data["entity_table"]),
        bridging_facts=bridging,
        store=VectorStore.load(root / STORE_FILENAME),
    )
