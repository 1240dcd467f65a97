"""Prompt templates for extraction, bridging, answering, and reasoning.

Templates use ``{name}`` placeholders (lowercase names only, so literal JSON
braces in instructions are left alone). Rendering substitutes bound values
verbatim and never re-scans substituted text.
"""

from __future__ import annotations

import re
from typing import Mapping

STAGE1_QA = "stage1_qa"
STAGE1_SUMMARY = "stage1_summary"
STAGE2_BRIDGE = "stage2_bridge"
ANSWER_GEN = "answer_gen"
IRCOT_STEP = "ircot_step"


class TemplateError(KeyError):
    """A template is unknown or a placeholder binding is missing."""


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

TEMPLATES: dict[str, str] = {
    STAGE1_QA: """\
You are an expert information extractor specializing in converting
unstructured documents into clear, atomic question-answer pairs.

Extract ALL factual information from the following document as
question-answer pairs. Each pair must answer exactly one question,
be self-contained, and be verifiable from the source content.
Extract questions for facts, descriptions, properties, relationships,
and events. For each entity mentioned, also extract questions about
its relationships to other entities.

Document:
{text}

The JSON object must have the form
{"qa_pairs": [{"question": "...", "answer": "..."}], "entities": ["..."]}.
Return only a valid JSON object without any other text.""",
    STAGE1_SUMMARY: """\
Given the following document, write a comprehensive summary that
captures all key facts, entities, relationships, and details.
Be thorough and do not omit important information.

Document:
{text}

Summary:""",
    STAGE2_BRIDGE: """\
Given the following information about "{entity}" from multiple
source documents, generate bridging facts that connect information
across these documents.

{doc_sections}

Requirements:
- Each bridging fact must combine information from 2+ documents
- Be factually accurate: only connect information that is logically related
- Each fact should be self-contained and understandable without context
- Do not generate speculative connections
- If documents share the entity name but are about unrelated topics, return empty

Return a JSON array of strings. If no meaningful connections exist, return [].""",
    ANSWER_GEN: """\
You are a precise question answering assistant. Answer with
ONLY the exact information requested, with no explanations or extra words.
If the answer is a name, give only the name. If the answer is a number,
give only the number. If the answer is yes/no, give only yes or no.

Context:
{context}

Question:
{question}""",
    IRCOT_STEP: """\
You are a reasoning assistant that helps answer multi-hop questions
step by step.

Question: {question}

Retrieved Information:
{context}

Reasoning so far:
{cot_so_far}

Write ONE brief reasoning sentence that makes progress toward
answering the question. If more information is needed, suggest a
specific search query.

Format your response as:
Reasoning: <one sentence of reasoning>
Search: <next search query, or DONE if ready to answer>""",
}


def placeholders(template_id: str) -> tuple[str, ...]:
    """Placeholder names of a template, in order of first appearance."""
    body = _template_body(template_id)
    seen: list[str] = []
    for name in _PLACEHOLDER_RE.findall(body):
        if name not in seen:
            seen.append(name)
    return tuple(seen)


def render_prompt(template_id: str, bindings: Mapping[str, str]) -> str:
    """Substitute ``{name}`` placeholders with the bound values, verbatim.

    Raises:
        TemplateError: for an unknown template or a missing binding,
            naming the offending placeholder.
    """
    body = _template_body(template_id)
    missing = [n for n in placeholders(template_id) if n not in bindings]
    if missing:
        raise TemplateError(
            f"template {template_id!r} is missing binding for placeholder "
            f"{missing[0]!r}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), body)


def _template_body(template_id: str) -> str:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}") from None
