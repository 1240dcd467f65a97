from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgerag.gateway import MockGateway, MockRule
from bridgerag.model import IndexEntry
from bridgerag.query import (
    QueryConfig,
    answer_ircot,
    answer_single,
    balanced_select,
    format_context,
    parse_reasoning_step,
    retrieve,
)
from bridgerag.store import VectorStore

from fixture_data import AYLWIN_GOLD, AYLWIN_QUESTION


def entries_from_kinds(kinds: str) -> list[IndexEntry]:
    """'ab' -> [aku, bridging] entries with sequential ids."""
    out = []
    for i, ch in enumerate(kinds):
        if ch == "a":
            out.append(
                IndexEntry(
                    entry_id=f"a{i}",
                    kind="aku",
                    text=f"aku {i}",
                    embedding=(1.0,),
                    provenance=frozenset({f"d{i}"}),
                )
            )
        else:
            out.append(
                IndexEntry(
                    entry_id=f"b{i}",
                    kind="bridging",
                    text=f"bridge {i}",
                    embedding=(1.0,),
                    provenance=frozenset({"dx", "dy"}),
                    entity="e",
                )
            )
    return out


def greedy_reference(ranked, k, k_b):
    """Line-by-line reimplementation of the greedy selection procedure."""
    selected = []
    n_b = 0
    for r in ranked:
        if len(selected) == k:
            break
        if r.kind == "aku" or n_b < k_b:
            selected.append(r)
            if r.kind == "bridging":
                n_b += 1
    return selected


class TestBalancedSelect:
    def test_hand_traced_example(self):
        # ranking [a, b, b, b, b, a, a, a], k=5, k_b=2 -> [a1, b1, b2, a2, a3]
        ranked = entries_from_kinds("abbbbaaa")
        chosen = balanced_select(ranked, 5, 2)
        assert [e.entry_id for e in chosen] == ["a0", "b1", "b2", "a5", "a6"]

    def test_kb_zero_takes_akus_only(self):
        ranked = entries_from_kinds("babab")
        chosen = balanced_select(ranked, 2, 0)
        assert [e.kind for e in chosen] == ["aku", "aku"]
        assert [e.entry_id for e in chosen] == ["a1", "a3"]

    def test_slack_kb_is_plain_topk(self):
        ranked = entries_from_kinds("bbaab")
        assert balanced_select(ranked, 4, 3) == ranked[:4]

    def test_exhaustive_against_reference(self):
        for length in range(0, 9):
            for kinds in itertools.product("ab", repeat=length):
                ranked = entries_from_kinds("".join(kinds))
                for k in range(1, 7):
                    for k_b in range(0, 5):
                        assert balanced_select(ranked, k, k_b) == greedy_reference(
                            ranked, k, k_b
                        )

    def test_validation(self):
        with pytest.raises(ValueError):
            balanced_select([], 0, 0)
        with pytest.raises(ValueError):
            balanced_select([], 1, -1)

    @given(
        st.text(alphabet="ab", max_size=12),
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=0, max_value=6),
    )
    def test_structural_properties(self, kinds, k, k_b):
        ranked = entries_from_kinds(kinds)
        chosen = balanced_select(ranked, k, k_b)
        assert len(chosen) <= k
        assert sum(1 for e in chosen if e.kind == "bridging") <= k_b
        # rank-order subsequence
        positions = [ranked.index(e) for e in chosen]
        assert positions == sorted(positions)
        # akus chosen are exactly the top-ranked akus up to the budget left
        akus_in = [e for e in chosen if e.kind == "aku"]
        all_akus = [e for e in ranked if e.kind == "aku"]
        assert akus_in == all_akus[: len(akus_in)]

    @given(st.text(alphabet="ab", max_size=12), st.integers(min_value=1, max_value=8))
    def test_bridging_count_monotone_in_kb(self, kinds, k):
        ranked = entries_from_kinds(kinds)
        counts = [
            sum(1 for e in balanced_select(ranked, k, k_b) if e.kind == "bridging")
            for k_b in range(0, 7)
        ]
        assert counts == sorted(counts)


class TestFormatContext:
    def test_bracket_numbering(self):
        entries = entries_from_kinds("ab")
        assert format_context(entries) == "[1] aku 0\n[2] bridge 1"

    def test_empty(self):
        assert format_context([]) == ""

    def test_order_preserved(self):
        entries = entries_from_kinds("aab")
        flipped = list(reversed(entries))
        lines = format_context(flipped).splitlines()
        assert lines[0] == "[1] bridge 2"
        assert lines[2] == "[3] aku 0"


def small_store(gateway: MockGateway, texts: dict[str, str]) -> VectorStore:
    store = VectorStore()
    vecs = gateway.embed_batch(list(texts.values()))
    store.upsert(
        [
            IndexEntry(
                entry_id=f"aku:{doc_id}",
                kind="aku",
                text=text,
                embedding=tuple(vec),
                provenance=frozenset({doc_id}),
            )
            for (doc_id, text), vec in zip(texts.items(), vecs)
        ]
    )
    return store


class TestRetrieve:
    def test_exact_text_ranks_first(self):
        gw = MockGateway()
        store = small_store(
            gw, {"d1": "a very particular sentence", "d2": "totally different words"}
        )
        hits = retrieve("a very particular sentence", 2, gw, store)
        assert hits[0].entry.provenance == frozenset({"d1"})
        assert hits[0].score == pytest.approx(1.0)

    def test_n_larger_than_store(self):
        gw = MockGateway()
        store = small_store(gw, {"d1": "one thing", "d2": "another thing"})
        assert len(retrieve("thing", 50, gw, store)) == 2

    def test_empty_query_rejected(self):
        gw = MockGateway()
        with pytest.raises(ValueError):
            retrieve("   ", 5, gw, VectorStore())

    def test_fixture_question_surfaces_bridging_fact(self, aylwin_gateway, aylwin_index):
        hits = retrieve(AYLWIN_QUESTION, 20, aylwin_gateway, aylwin_index.store)
        top3 = hits[:3]
        assert any(
            h.entry.kind == "bridging" and "Weston-super-Mare" in h.entry.text for h in top3
        )


class TestAnswerSingle:
    def test_fixture_answer(self, aylwin_gateway, aylwin_index):
        result = answer_single(AYLWIN_QUESTION, QueryConfig(), aylwin_gateway, aylwin_index.store)
        assert result.answer == AYLWIN_GOLD
        assert result.llm_calls == 1
        assert result.steps_trace is None

    def test_single_chat_and_single_embed_per_call(self, aylwin_gateway, aylwin_index):
        chat0, embed0 = aylwin_gateway.ledger.snapshot()
        answer_single(AYLWIN_QUESTION, QueryConfig(), aylwin_gateway, aylwin_index.store)
        chat1, embed1 = aylwin_gateway.ledger.snapshot()
        assert chat1 - chat0 == 1
        assert embed1 - embed0 == 1

    def test_empty_store_still_answers(self):
        gw = MockGateway(rules=[], default_response="no idea")
        result = answer_single("anything at all?", QueryConfig(), gw, VectorStore())
        assert result.answer == "no idea"
        assert result.llm_calls == 1
        assert result.selected_context == []


class TestQueryConfig:
    def test_defaults(self):
        cfg = QueryConfig()
        assert (cfg.n_candidates, cfg.k, cfg.k_b) == (20, 10, 3)
        assert (cfg.ircot_steps, cfg.ircot_per_step) == (3, 20)

    def test_validation(self):
        with pytest.raises(ValueError):
            QueryConfig(k=30, n_candidates=20)
        with pytest.raises(ValueError):
            QueryConfig(k_b=11, k=10)
        with pytest.raises(ValueError):
            QueryConfig(mode="other")


class TestParseReasoningStep:
    def test_well_formed(self):
        reasoning, search = parse_reasoning_step("Reasoning: X happened.\nSearch: next query")
        assert reasoning == "X happened."
        assert search == "next query"

    def test_done(self):
        assert parse_reasoning_step("Reasoning: r\nSearch: DONE") == ("r", None)
        assert parse_reasoning_step("Reasoning: r\nSearch: done") == ("r", None)

    def test_unparseable_treated_as_done(self):
        assert parse_reasoning_step("total nonsense") == ("", None)


class TestAnswerIrcot:
    def _store_and_gateway(self, step_rules):
        gw = MockGateway(
            rules=step_rules + [MockRule(contains="Question:\nwhat is it?", response="the answer")]
        )
        store = small_store(gw, {"d1": "one fact", "d2": "two facts"})
        return gw, store

    def test_done_at_step_one_is_two_calls(self):
        gw, store = self._store_and_gateway(
            [
                MockRule(
                    contains="Reasoning so far:",
                    response="Reasoning: enough already.\nSearch: DONE",
                )
            ]
        )
        result = answer_ircot("what is it?", QueryConfig(mode="ircot"), gw, store)
        assert result.llm_calls == 2
        assert result.steps_trace == [("enough already.", "DONE")]

    def test_never_done_runs_all_steps(self):
        gw, store = self._store_and_gateway(
            [
                MockRule(
                    contains="Reasoning so far:",
                    response="Reasoning: keep going.\nSearch: again",
                )
            ]
        )
        result = answer_ircot("what is it?", QueryConfig(mode="ircot", ircot_steps=3), gw, store)
        assert result.llm_calls == 4
        assert len(result.steps_trace) == 3

    def test_search_line_becomes_next_query(self):
        seen_queries = []

        class Spy(MockGateway):
            def embed_batch(self, texts):
                seen_queries.extend(texts)
                return super().embed_batch(texts)

        gw = Spy(
            rules=[
                MockRule(
                    regex=r"(?s)Reasoning so far:\n\(none\)",
                    response="Reasoning: first.\nSearch: EXACT FOLLOWUP",
                ),
                MockRule(
                    contains="Reasoning so far:",
                    response="Reasoning: second.\nSearch: DONE",
                ),
                MockRule(contains="Question:", response="fin"),
            ]
        )
        store = small_store(gw, {"d1": "x"})
        seen_queries.clear()
        answer_ircot("first question?", QueryConfig(mode="ircot"), gw, store)
        assert seen_queries == ["first question?", "EXACT FOLLOWUP"]

    def test_unparseable_step_proceeds_to_answer(self):
        gw, store = self._store_and_gateway(
            [MockRule(contains="Reasoning so far:", response="garbled output")]
        )
        result = answer_ircot("what is it?", QueryConfig(mode="ircot"), gw, store)
        assert result.llm_calls == 2
        assert result.answer == "the answer"

    def test_fixture_ircot_run(self, aylwin_ircot_gateway, index_config):
        from bridgerag.indexer import build_index

        from fixture_data import AYLWIN_CORPUS

        index = build_index(AYLWIN_CORPUS, index_config, aylwin_ircot_gateway)
        result = answer_ircot(
            AYLWIN_QUESTION, QueryConfig(mode="ircot"), aylwin_ircot_gateway, index.store
        )
        assert result.answer == AYLWIN_GOLD
        assert result.llm_calls == 3  # two reasoning steps + answer
        assert result.steps_trace[0][1] == "Henry Edwards birthplace"
