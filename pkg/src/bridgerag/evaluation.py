"""Question-answering metrics and the batch evaluation harness.

Answers are normalized SQuAD-style before comparison: lowercase, delete
punctuation, drop the articles a/an/the as whole tokens, collapse
whitespace. EM demands normalized equality, Acc substring containment of
the gold answer, and F1 the token-level harmonic mean with bag (multiset)
overlap. Recall@k credits only AKU entries, since bridging facts do not
correspond to any original passage.
"""

from __future__ import annotations

import json
import logging
import re
import string
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .model import KIND_AKU, IndexEntry
from .query import QueryConfig, answer_query
from .store import VectorStore

logger = logging.getLogger(__name__)

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    s = s.lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLES_RE.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def accuracy(pred: str, gold: str) -> int:
    """1 iff the normalized gold answer is a substring of the prediction."""
    return int(normalize_answer(gold) in normalize_answer(pred))


def f1(pred: str, gold: str) -> float:
    """Token-level F1 with bag-of-tokens overlap.

    0.0 when either token sequence is empty or nothing overlaps.
    """
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def recall_at_k(
    selected: Sequence[IndexEntry], gold_passage_ids: set[str] | frozenset[str], k: int
) -> float:
    """Fraction of gold passages covered by AKU entries in the top-k.

    Bridging entries never count. Vacuously 1.0 for an empty gold set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gold = set(gold_passage_ids)
    if not gold:
        return 1.0
    covered = set()
    for entry in selected[:k]:
        if entry.kind == KIND_AKU:
            covered.update(entry.provenance)
    return len(covered & gold) / len(gold)


@dataclass(frozen=True)
class EvalQuestion:
    question_id: str
    question: str
    gold_answer: str
    gold_passage_ids: frozenset[str]
    question_type: str | None = None

    def __post_init__(self) -> None:
        if not self.gold_answer:
            raise ValueError(f"question {self.question_id!r} has empty gold answer")


def load_dataset(path: str | Path) -> list[EvalQuestion]:
    """Read a dataset file: one JSON object per line.

    Fields: ``question_id``, ``question``, ``answer``, ``supporting_ids``,
    optional ``type``.
    """
    questions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            questions.append(
                EvalQuestion(
                    question_id=str(rec["question_id"]),
                    question=str(rec["question"]),
                    gold_answer=str(rec["answer"]),
                    gold_passage_ids=frozenset(
                        str(d) for d in rec.get("supporting_ids", [])
                    ),
                    question_type=rec.get("type"),
                )
            )
    return questions


@dataclass
class QuestionRecord:
    question_id: str
    em: int
    acc: int
    f1: float
    recall_at_k: float
    llm_calls: int
    retrieval_latency: float
    answer: str
    question_type: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "em": self.em,
            "acc": self.acc,
            "f1": self.f1,
            "recall_at_k": self.recall_at_k,
            "llm_calls": self.llm_calls,
            "retrieval_latency": self.retrieval_latency,
            "answer": self.answer,
            "question_type": self.question_type,
            "error": self.error,
        }


@dataclass
class EvalReport:
    """Per-question records plus aggregate means (metrics x100, as %)."""

    records: list[QuestionRecord]
    aggregates: dict[str, float]
    per_type: dict[str, dict[str, float]] | None
    config: dict
    run_info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "per_type": self.per_type,
            "config": self.config,
            "run": self.run_info,
        }


def _aggregate(records: Sequence[QuestionRecord]) -> dict[str, float]:
    n = len(records)
    if n == 0:
        return {
            "n_questions": 0,
            "em": 0.0,
            "acc": 0.0,
            "f1": 0.0,
            "recall_at_k": 0.0,
            "mean_llm_calls": 0.0,
            "mean_retrieval_latency": 0.0,
        }
    return {
        "n_questions": n,
        "em": 100.0 * sum(r.em for r in records) / n,
        "acc": 100.0 * sum(r.acc for r in records) / n,
        "f1": 100.0 * sum(r.f1 for r in records) / n,
        "recall_at_k": 100.0 * sum(r.recall_at_k for r in records) / n,
        "mean_llm_calls": sum(r.llm_calls for r in records) / n,
        "mean_retrieval_latency": sum(r.retrieval_latency for r in records) / n,
    }


def run_eval(
    questions: Sequence[EvalQuestion],
    query_config: QueryConfig,
    gateway,
    store: VectorStore,
    skip_failures: bool = False,
) -> EvalReport:
    """Evaluate every question through the configured engine mode.

    A question whose pipeline errors scores zero on all metrics by default;
    with ``skip_failures`` such questions are excluded from the aggregates
    (their records are kept either way). Records are merged in question_id
    order so reruns are directly comparable.
    """
    records: list[QuestionRecord] = []
    for q in questions:
        try:
            result = answer_query(q.question, query_config, gateway, store)
            records.append(
                QuestionRecord(
                    question_id=q.question_id,
                    em=exact_match(result.answer, q.gold_answer),
                    acc=accuracy(result.answer, q.gold_answer),
                    f1=f1(result.answer, q.gold_answer),
                    recall_at_k=recall_at_k(
                        result.selected_context, q.gold_passage_ids, query_config.k
                    ),
                    llm_calls=result.llm_calls,
                    retrieval_latency=result.retrieval_latency,
                    answer=result.answer,
                    question_type=q.question_type,
                )
            )
        except Exception as exc:  # noqa: BLE001 - one bad question must not kill the run
            logger.warning("question %s failed: %s", q.question_id, exc)
            records.append(
                QuestionRecord(
                    question_id=q.question_id,
                    em=0,
                    acc=0,
                    f1=0.0,
                    recall_at_k=0.0,
                    llm_calls=0,
                    retrieval_latency=0.0,
                    answer="",
                    question_type=q.question_type,
                    error=str(exc),
                )
            )
    records.sort(key=lambda r: r.question_id)
    scored = [r for r in records if r.error is None] if skip_failures else records
    aggregates = _aggregate(scored)

    per_type: dict[str, dict[str, float]] | None = None
    if any(r.question_type for r in scored):
        per_type = {}
        for qtype in sorted({r.question_type or "unknown" for r in scored}):
            group = [r for r in scored if (r.question_type or "unknown") == qtype]
            per_type[qtype] = _aggregate(group)

    return EvalReport(
        records=records,
        aggregates=aggregates,
        per_type=per_type,
        config={
            "n_candidates": query_config.n_candidates,
            "k": query_config.k,
            "k_b": query_config.k_b,
            "mode": query_config.mode,
            "ircot_steps": query_config.ircot_steps,
            "ircot_per_step": query_config.ircot_per_step,
            "skip_failures": skip_failures,
        },
        run_info={
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "n_questions": len(questions),
        },
    )


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``report.json`` and ``per_question.jsonl`` into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    per_question_path = out / "per_question.jsonl"
    with open(per_question_path, "w", encoding="utf-8") as fh:
        for rec in report.records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return report_path, per_question_path
