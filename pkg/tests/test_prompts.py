from __future__ import annotations

import re

import pytest

from bridgerag.prompts import (
    ANSWER_GEN,
    IRCOT_STEP,
    STAGE1_QA,
    STAGE1_SUMMARY,
    STAGE2_BRIDGE,
    TEMPLATES,
    TemplateError,
    placeholders,
    render_prompt,
)

# Fixed instruction strings every rendered prompt must contain verbatim.
GOLDEN_PHRASES = {
    STAGE1_QA: [
        "atomic question-answer pairs",
        "Extract ALL factual information",
        "Return only a valid JSON object without any other text.",
    ],
    STAGE1_SUMMARY: [
        "write a comprehensive summary",
        "Be thorough and do not omit important information.",
    ],
    STAGE2_BRIDGE: [
        "generate bridging facts that connect information",
        "Each bridging fact must combine information from 2+ documents",
        "If no meaningful connections exist, return [].",
    ],
    ANSWER_GEN: [
        "ONLY the exact information requested",
        "If the answer is yes/no, give only yes or no.",
    ],
    IRCOT_STEP: [
        "ONE brief reasoning sentence",
        "Reasoning: <one sentence of reasoning>",
        "Search: <next search query, or DONE if ready to answer>",
    ],
}

FULL_BINDINGS = {
    STAGE1_QA: {"text": "DOC BODY"},
    STAGE1_SUMMARY: {"text": "DOC BODY"},
    STAGE2_BRIDGE: {"entity": "Henry Edwards", "doc_sections": "SECTIONS"},
    ANSWER_GEN: {"context": "CTX", "question": "Q?"},
    IRCOT_STEP: {"question": "Q?", "context": "CTX", "cot_so_far": "(none)"},
}


@pytest.mark.parametrize("template_id", sorted(TEMPLATES))
def test_golden_phrases_survive_rendering(template_id):
    rendered = render_prompt(template_id, FULL_BINDINGS[template_id])
    for phrase in GOLDEN_PHRASES[template_id]:
        assert phrase in rendered


@pytest.mark.parametrize("template_id", sorted(TEMPLATES))
def test_no_unresolved_placeholders(template_id):
    rendered = render_prompt(template_id, FULL_BINDINGS[template_id])
    assert not re.search(r"\{[a-z_]+\}", rendered)


def test_bindings_substituted_verbatim():
    rendered = render_prompt(
        STAGE2_BRIDGE,
        {"entity": "Henry Edwards", "doc_sections": "Document 1 (a):\n- f1"},
    )
    assert 'about "Henry Edwards"' in rendered
    assert "Document 1 (a):\n- f1" in rendered


def test_answer_prompt_places_context_before_question():
    rendered = render_prompt(ANSWER_GEN, {"context": "CTXMARK", "question": "QMARK"})
    assert rendered.index("CTXMARK") < rendered.index("QMARK")


def test_missing_binding_names_placeholder():
    with pytest.raises(TemplateError, match="doc_sections"):
        render_prompt(STAGE2_BRIDGE, {"entity": "x"})


def test_unknown_template_rejected():
    with pytest.raises(TemplateError):
        render_prompt("nope", {})


def test_placeholder_free_rendering_is_identity():
    # braces in values must not be re-expanded
    rendered = render_prompt(ANSWER_GEN, {"context": "{weird} {context}", "question": "q"})
    assert "{weird} {context}" in rendered


def test_placeholders_listed_in_order():
    assert placeholders(STAGE2_BRIDGE) == ("entity", "doc_sections")
    assert placeholders(IRCOT_STEP) == ("question", "context", "cot_so_far")
