"""Online inference: retrieval, balanced context selection, answering.

Single-pass mode costs exactly one query embedding, one vector search, and
one chat completion. The iterative mode interleaves short reasoning steps
with fresh retrievals (up to a fixed step budget, terminated early by a
DONE sentinel) and answers once over the accumulated candidate pool.

Balanced context selection walks the ranking in order and admits every AKU,
but at most ``k_b`` bridging facts, until ``k`` entries are selected. This
keeps the shorter bridging facts from crowding out the denser AKUs.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass
from typing import Sequence

from .gateway import ANSWER_MAX_TOKENS, ChatRequest
from .model import KIND_AKU, IndexEntry
from .prompts import ANSWER_GEN, IRCOT_STEP, render_prompt
from .store import SearchHit, VectorStore

logger = logging.getLogger(__name__)

MODE_SINGLE_PASS = "single_pass"
MODE_IRCOT = "ircot"

IRCOT_STEP_MAX_TOKENS = 256
DONE_SENTINEL = "DONE"
EMPTY_REASONING = "(none)"


@dataclass(frozen=True)
class QueryConfig:
    n_candidates: int = 20
    k: int = 10
    k_b: int = 3
    mode: str = MODE_SINGLE_PASS
    ircot_steps: int = 3
    ircot_per_step: int = 20

    def __post_init__(self) -> None:
        if self.n_candidates < 1 or self.k < 1:
            raise ValueError("n_candidates and k must be >= 1")
        if self.k > self.n_candidates:
            raise ValueError("k must be <= n_candidates")
        if not 0 <= self.k_b <= self.k:
            raise ValueError("k_b must be in [0, k]")
        if self.mode not in (MODE_SINGLE_PASS, MODE_IRCOT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ircot_steps < 1 or self.ircot_per_step < 1:
            raise ValueError("ircot_steps and ircot_per_step must be >= 1")


@dataclass
class QueryResult:
    answer: str
    selected_context: list[IndexEntry]
    llm_calls: int
    retrieval_latency: float
    steps_trace: list[tuple[str, str]] | None = None

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "selected_context": [
                {
                    "entry_id": e.entry_id,
                    "kind": e.kind,
                    "text": e.text,
                    "provenance": sorted(e.provenance),
                    "entity": e.entity,
                }
                for e in self.selected_context
            ],
            "llm_calls": self.llm_calls,
            "retrieval_latency": self.retrieval_latency,
            "steps_trace": (
                None
                if self.steps_trace is None
                else [{"reasoning": r, "search": s} for r, s in self.steps_trace]
            ),
        }


def retrieve(query: str, n: int, gateway, store: VectorStore) -> list[SearchHit]:
    """Embed the query with the indexing model and return the top-n hits."""
    if not query.strip():
        raise ValueError("query is empty")
    vec = gateway.embed_batch([query])[0]
    if len(store) == 0:
        return []
    return store.search(vec, n)


def balanced_select(
    ranked: Sequence[IndexEntry], k: int, k_b: int
) -> list[IndexEntry]:
    """Greedy rank-order selection admitting at most k_b bridging entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k_b < 0:
        raise ValueError("k_b must be >= 0")
    selected: list[IndexEntry] = []
    n_bridging = 0
    for entry in ranked:
        if len(selected) == k:
            break
        if entry.kind == KIND_AKU or n_bridging < k_b:
            selected.append(entry)
            if entry.kind != KIND_AKU:
                n_bridging += 1
    return selected


def format_context(entries: Sequence[IndexEntry]) -> str:
    """Join entries with 1-based bracket numbering, in the given order."""
    return "\n".join(f"[{i}] {e.text}" for i, e in enumerate(entries, 1))


def _answer_over(question: str, context: Sequence[IndexEntry], gateway) -> str:
    prompt = render_prompt(
        ANSWER_GEN, {"context": format_context(context), "question": question}
    )
    return gateway.chat_complete(
        ChatRequest(user=prompt, temperature=0.0, max_tokens=ANSWER_MAX_TOKENS)
    ).strip()


def answer_single(
    question: str, config: QueryConfig, gateway, store: VectorStore
) -> QueryResult:
    """One retrieval pass, balanced selection, one chat completion."""
    start = time.perf_counter()
    hits = retrieve(question, config.n_candidates, gateway, store)
    context = balanced_select([h.entry for h in hits], config.k, config.k_b)
    latency = time.perf_counter() - start
    answer = _answer_over(question, context, gateway)
    return QueryResult(
        answer=answer,
        selected_context=context,
        llm_calls=1,
        retrieval_latency=latency,
    )


_REASONING_RE = re.compile(r"^Reasoning:\s*(.*)$", re.MULTILINE)
_SEARCH_RE = re.compile(r"^Search:\s*(.*)$", re.MULTILINE)


def parse_reasoning_step(text: str) -> tuple[str, str | None]:
    """Extract the Reasoning/Search lines from one step's output.

    Returns (reasoning, search_query). A missing Search line or a DONE
    sentinel yields search_query = None, meaning "ready to answer".
    """
    reasoning_m = _REASONING_RE.search(text)
    reasoning = reasoning_m.group(1).strip() if reasoning_m else ""
    search_m = _SEARCH_RE.search(text)
    if search_m is None:
        logger.warning("unparseable reasoning step output; treating as DONE")
        return reasoning, None
    search = search_m.group(1).strip()
    if not search or search.upper() == DONE_SENTINEL:
        return reasoning, None
    return reasoning, search


def answer_ircot(
    question: str, config: QueryConfig, gateway, store: VectorStore
) -> QueryResult:
    """Interleaved reasoning and retrieval, then one final answer call.

    Per-step retrievals accumulate into a candidate pool keyed by entry id,
    keeping each entry's maximum score; balanced selection is applied once,
    at final answer generation.
    """
    pool: dict[str, tuple[int, float, IndexEntry]] = {}  # id -> (first_seen, best, entry)
    latency = 0.0
    reasoning_log: list[str] = []
    trace: list[tuple[str, str]] = []
    llm_calls = 0
    search_query = question

    for _ in range(config.ircot_steps):
        start = time.perf_counter()
        hits = retrieve(search_query, config.ircot_per_step, gateway, store)
        latency += time.perf_counter() - start
        for hit in hits:
            prior = pool.get(hit.entry.entry_id)
            if prior is None:
                pool[hit.entry.entry_id] = (len(pool), hit.score, hit.entry)
            elif hit.score > prior[1]:
                pool[hit.entry.entry_id] = (prior[0], hit.score, hit.entry)
        prompt = render_prompt(
            IRCOT_STEP,
            {
                "question": question,
                "context": format_context([h.entry for h in hits]),
                "cot_so_far": "\n".join(reasoning_log) or EMPTY_REASONING,
            },
        )
        output = gateway.chat_complete(
            ChatRequest(user=prompt, temperature=0.0, max_tokens=IRCOT_STEP_MAX_TOKENS)
        )
        llm_calls += 1
        reasoning, next_query = parse_reasoning_step(output)
        trace.append((reasoning, next_query if next_query is not None else DONE_SENTINEL))
        if reasoning:
            reasoning_log.append(reasoning)
        if next_query is None:
            break
        search_query = next_query

    start = time.perf_counter()
    ranked = [
        entry
        for _, _, entry in sorted(pool.values(), key=lambda t: (-t[1], t[0]))
    ]
    context = balanced_select(ranked, config.k, config.k_b)
    latency += time.perf_counter() - start
    answer = _answer_over(question, context, gateway)
    llm_calls += 1
    return QueryResult(
        answer=answer,
        selected_context=context,
        llm_calls=llm_calls,
        retrieval_latency=latency,
        steps_trace=trace,
    )


def answer_query(
    question: str, config: QueryConfig, gateway, store: VectorStore
) -> QueryResult:
    """Dispatch to the configured inference mode."""
    if config.mode == MODE_IRCOT:
        return answer_ircot(question, config, gateway, store)
    return answer_single(question, config, gateway, store)
