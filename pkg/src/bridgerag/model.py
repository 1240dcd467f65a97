"""Core data types shared across the indexing and query pipeline.

Documents are distilled into atomic knowledge units (AKUs), entities are
aggregated into a document-frequency table, and both AKUs and cross-document
bridging facts end up as uniform entries in one flat vector store.

All types here are immutable value objects once constructed and can be
shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

KIND_AKU = "aku"
KIND_BRIDGING = "bridging"

STAGE1_QA = "qa_extraction"
STAGE1_SUMMARY = "summary"
STAGE1_CHUNKING = "chunking"
STAGE1_STRATEGIES = (STAGE1_QA, STAGE1_SUMMARY, STAGE1_CHUNKING)

#: Separator used to merge per-document facts into one retrievable text unit.
MERGE_SEPARATOR = ". "


def normalize_entity_key(raw: str) -> str:
    """Return the canonical key for an entity surface form.

    Trims, case-folds, and collapses internal whitespace. The transform is
    idempotent, so keys can safely be re-normalized.

    Raises:
        ValueError: if the string is empty after trimming.
    """
    key = " ".join(raw.casefold().split())
    if not key:
        raise ValueError("entity string is empty after normalization")
    return key


def soft_normalize(text: str) -> str:
    """Same transform as normalize_entity_key but tolerant of empty input."""
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class Document:
    """A source passage: identifier, optional title, and body text."""

    doc_id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be nonempty")
        if not self.text.strip():
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class AtomicKnowledgeUnit:
    """Per-document merged fact text: the minimal retrievable unit.

    ``merged_text`` is always the deterministic join of ``facts`` with
    :data:`MERGE_SEPARATOR`, in extraction order.
    """

    doc_id: str
    facts: tuple[str, ...]
    merged_text: str
    entities: frozenset[str]

    def __post_init__(self) -> None:
        if not self.facts:
            raise ValueError(f"AKU for {self.doc_id!r} has no facts")
        if self.merged_text != MERGE_SEPARATOR.join(self.facts):
            raise ValueError("merged_text is not the canonical join of facts")
        if any(not e.strip() for e in self.entities):
            raise ValueError("AKU entities must be nonempty strings")

    @classmethod
    def from_facts(
        cls,
        doc_id: str,
        facts: Sequence[str],
        entities: Iterable[str] = (),
    ) -> "AtomicKnowledgeUnit":
        facts_t = tuple(facts)
        return cls(
            doc_id=doc_id,
            facts=facts_t,
            merged_text=MERGE_SEPARATOR.join(facts_t),
            entities=frozenset(e.strip() for e in entities if e.strip()),
        )


@dataclass(frozen=True)
class BridgingFact:
    """A generated cross-document statement keyed on a bridge entity."""

    fact_id: str
    entity: str  # normalized entity key
    text: str
    source_doc_ids: frozenset[str]

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("bridging fact text must be nonempty")
        if len(self.source_doc_ids) < 2:
            raise ValueError(
                f"bridging fact {self.fact_id!r} needs >= 2 source documents"
            )


class EntityTable:
    """Aggregates entity occurrences across documents.

    Maps normalized entity key -> (display string, ordered unique doc ids).
    The display string is the lexicographically smallest surface form seen,
    which keeps it independent of document insertion order. Duplicate
    mentions within one document count once (document frequency is over
    documents, not mentions).
    """

    def __init__(self) -> None:
        self._display: dict[str, str] = {}
        self._doc_ids: dict[str, list[str]] = {}

    def add(self, raw_entity: str, doc_id: str) -> str:
        """Record one entity occurrence; returns the normalized key."""
        key = normalize_entity_key(raw_entity)
        display = raw_entity.strip()
        prior = self._display.get(key)
        if prior is None or display < prior:
            self._display[key] = display
        docs = self._doc_ids.setdefault(key, [])
        if doc_id not in docs:
            docs.append(doc_id)
        return key

    @classmethod
    def from_akus(cls, akus: Iterable[AtomicKnowledgeUnit]) -> "EntityTable":
        table = cls()
        for aku in akus:
            for raw in sorted(aku.entities):
                table.add(raw, aku.doc_id)
        return table

    def document_frequency(self, entity_key: str) -> int:
        """Number of distinct documents whose entity set contains the key.

        Accepts raw or normalized forms; absent entities have frequency 0.
        """
        key = soft_normalize(entity_key)
        return len(self._doc_ids.get(key, ()))

    def doc_ids_for(self, entity_key: str) -> tuple[str, ...]:
        """Ordered unique doc ids containing the entity (insertion order)."""
        return tuple(self._doc_ids.get(soft_normalize(entity_key), ()))

    def display_for(self, entity_key: str) -> str:
        key = soft_normalize(entity_key)
        return self._display.get(key, key)

    def keys(self) -> tuple[str, ...]:
        return tuple(self._doc_ids)

    def __contains__(self, entity_key: str) -> bool:
        return soft_normalize(entity_key) in self._doc_ids

    def __len__(self) -> int:
        return len(self._doc_ids)

    def to_dict(self) -> dict:
        return {
            key: {"display": self._display[key], "doc_ids": list(docs)}
            for key, docs in self._doc_ids.items()
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping]) -> "EntityTable":
        table = cls()
        for key, rec in data.items():
            table._display[key] = str(rec["display"])
            table._doc_ids[key] = [str(d) for d in rec["doc_ids"]]
        return table


def document_frequency(table: EntityTable, entity_key: str) -> int:
    """df(e): how many documents' entity sets contain the given entity."""
    return table.document_frequency(entity_key)


@dataclass(frozen=True)
class IndexEntry:
    """A uniform vector-store record for either an AKU or a bridging fact.

    AKU entries carry exactly one provenance doc id; bridging entries carry
    at least two plus the bridge entity key.
    """

    entry_id: str
    kind: str
    text: str
    embedding: tuple[float, ...]
    provenance: frozenset[str]
    entity: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (KIND_AKU, KIND_BRIDGING):
            raise ValueError(f"unknown entry kind {self.kind!r}")
        if not self.text:
            raise ValueError(f"entry {self.entry_id!r} has empty text")
        if not self.embedding:
            raise ValueError(f"entry {self.entry_id!r} has empty embedding")
        if self.kind == KIND_AKU:
            if len(self.provenance) != 1:
                raise ValueError("aku entries carry exactly one provenance doc")
            if self.entity is not None:
                raise ValueError("aku entries carry no entity")
        else:
            if len(self.provenance) < 2:
                raise ValueError("bridging entries carry >= 2 provenance docs")
            if not self.entity:
                raise ValueError("bridging entries must name their entity")


@dataclass(frozen=True)
class IndexConfig:
    """Offline-indexing knobs.

    ``max_source_docs`` must be at least 2: bridging facts require two
    source documents, so a cap of 1 could never produce a valid fact.
    """

    tau: int = 10
    max_source_docs: int = 5
    max_facts_per_doc: int = 8
    stage1_strategy: str = STAGE1_QA
    chunk_target_words: int = 100
    chunk_overlap_chars: int = 80
    parallelism: int = 4
    index_max_tokens: int = 2048
    max_doc_chars: int = 24000

    def __post_init__(self) -> None:
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if self.max_source_docs < 2:
            raise ValueError("max_source_docs must be >= 2")
        if self.max_facts_per_doc < 1:
            raise ValueError("max_facts_per_doc must be >= 1")
        if self.stage1_strategy not in STAGE1_STRATEGIES:
            raise ValueError(f"unknown stage1 strategy {self.stage1_strategy!r}")
        if self.chunk_target_words < 1:
            raise ValueError("chunk_target_words must be >= 1")
        if self.chunk_overlap_chars < 0:
            raise ValueError("chunk_overlap_chars must be >= 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "IndexConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def load_corpus(path: str | Path) -> list[Document]:
    """Read a corpus file: one JSON object per line with doc_id/title/text."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            doc = Document(
                doc_id=str(rec["doc_id"]),
                title=str(rec.get("title", "")),
                text=str(rec["text"]),
            )
            if doc.doc_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(
                json.dumps(
                    {"doc_id": doc.doc_id, "title": doc.title, "text": doc.text},
                    ensure_ascii=False,
                )
                + "\n"
            )
