"""Bridging-fact indexing for multi-hop retrieval QA.

Offline, documents are distilled into atomic knowledge units and entities;
entities shared across documents seed LLM-generated bridging facts that are
stored alongside the originals in one flat vector store. Online, a single
retrieval pass with balanced context selection and one chat completion
answer multi-hop questions; an IRCoT-style iterative mode is also provided.
"""

from .evaluation import (
    EvalQuestion,
    EvalReport,
    accuracy,
    exact_match,
    f1,
    load_dataset,
    normalize_answer,
    recall_at_k,
    run_eval,
    write_report,
)
from .gateway import (
    CallLedger,
    ChatRequest,
    GatewayConfig,
    GatewayError,
    MockGateway,
    OpenAIGateway,
    hash_embedding,
)
from .indexer import (
    AddResult,
    BridgeEntitySet,
    ExtractionError,
    IndexStats,
    KnowledgeIndex,
    Stage1Result,
    add_document,
    build_index,
    chunk_document,
    collect_entity_facts,
    extract_qa,
    extract_summary,
    generate_bridging_facts,
    identify_bridge_entities,
    load_index,
    save_index,
)
from .model import (
    AtomicKnowledgeUnit,
    BridgingFact,
    Document,
    EntityTable,
    IndexConfig,
    IndexEntry,
    document_frequency,
    load_corpus,
    normalize_entity_key,
)
from .prompts import TemplateError, render_prompt
from .query import (
    QueryConfig,
    QueryResult,
    answer_ircot,
    answer_query,
    answer_single,
    balanced_select,
    format_context,
    retrieve,
)
from .store import PersistenceError, SearchHit, StoreError, VectorStore

__version__ = "0.1.0"

__all__ = [
    "AddResult",
    "AtomicKnowledgeUnit",
    "BridgeEntitySet",
    "BridgingFact",
    "CallLedger",
    "ChatRequest",
    "Document",
    "EntityTable",
    "EvalQuestion",
    "EvalReport",
    "ExtractionError",
    "GatewayConfig",
    "GatewayError",
    "IndexConfig",
    "IndexEntry",
    "IndexStats",
    "KnowledgeIndex",
    "MockGateway",
    "OpenAIGateway",
    "PersistenceError",
    "QueryConfig",
    "QueryResult",
    "SearchHit",
    "Stage1Result",
    "StoreError",
    "TemplateError",
    "VectorStore",
    "accuracy",
    "add_document",
    "answer_ircot",
    "answer_query",
    "answer_single",
    "balanced_select",
    "build_index",
    "chunk_document",
    "collect_entity_facts",
    "document_frequency",
    "exact_match",
    "extract_qa",
    "extract_summary",
    "f1",
    "format_context",
    "generate_bridging_facts",
    "hash_embedding",
    "identify_bridge_entities",
    "load_corpus",
    "load_dataset",
    "load_index",
    "normalize_answer",
    "normalize_entity_key",
    "recall_at_k",
    "render_prompt",
    "retrieve",
    "run_eval",
    "save_index",
    "write_report",
]
