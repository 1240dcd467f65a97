from __future__ import annotations

import json

import pytest

from bridgerag.cli import main, parse_kb_values, resolve_config

from fixture_data import (
    AYLWIN_CORPUS,
    AYLWIN_DATASET,
    AYLWIN_GOLD,
    AYLWIN_QUESTION,
    aylwin_script,
    widget_corpus,
    widget_script_ircot,
    write_json,
    write_jsonl,
)
from bridgerag.model import write_corpus


@pytest.fixture()
def fixture_paths(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(AYLWIN_CORPUS, corpus)
    script = write_json(aylwin_script(), tmp_path / "mock.json")
    ircot_script = write_json(aylwin_script(ircot=True), tmp_path / "mock_ircot.json")
    dataset = write_jsonl(AYLWIN_DATASET, tmp_path / "dataset.jsonl")
    return {
        "corpus": corpus,
        "script": script,
        "ircot_script": ircot_script,
        "dataset": dataset,
        "index": tmp_path / "idx",
        "out": tmp_path / "out",
    }


def build_fixture_index(paths) -> int:
    return main(
        [
            "index",
            "--corpus",
            str(paths["corpus"]),
            "--index",
            str(paths["index"]),
            "--mock-script",
            str(paths["script"]),
        ]
    )


class TestResolveConfig:
    def test_precedence_flag_over_file_over_default(self, tmp_path):
        config_file = tmp_path / "cfg.json"
        config_file.write_text(json.dumps({"tau": 5}))
        # default only
        assert resolve_config({}, None)["tau"] == 10
        # config file beats default
        assert resolve_config({}, str(config_file))["tau"] == 5
        # flag beats config file
        assert resolve_config({"tau": 3}, str(config_file))["tau"] == 3

    def test_env_endpoint_override(self, monkeypatch):
        monkeypatch.setenv("BRIDGERAG_ENDPOINT", "http://env.example/v1")
        cfg = resolve_config({"endpoint": "http://flag.example/v1"}, None)
        assert cfg["endpoint"] == "http://env.example/v1"

    def test_parse_kb_values(self):
        assert parse_kb_values("3") == [3]
        assert parse_kb_values("0,1,2,3,5") == [0, 1, 2, 3, 5]
        assert parse_kb_values(4) == [4]
        with pytest.raises(ValueError):
            parse_kb_values("")


class TestIndexCommand:
    def test_builds_and_reports_stats(self, fixture_paths, capsys):
        assert build_fixture_index(fixture_paths) == 0
        out = capsys.readouterr().out
        assert "bridge entities: 1" in out
        assert "bridging facts: 2" in out
        assert "non-empty rate: 1.00" in out
        assert (fixture_paths["index"] / "store.jsonl").exists()
        assert (fixture_paths["index"] / "stats.json").exists()

    def test_unreadable_corpus_path(self, fixture_paths, capsys):
        rc = main(
            [
                "index",
                "--corpus",
                "/nonexistent/corpus.jsonl",
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 1
        assert "/nonexistent/corpus.jsonl" in capsys.readouterr().err

    def test_chunking_strategy_has_no_bridging(self, fixture_paths, capsys):
        rc = main(
            [
                "index",
                "--corpus",
                str(fixture_paths["corpus"]),
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
                "--stage1",
                "chunking",
            ]
        )
        assert rc == 0
        assert "bridging facts: 0" in capsys.readouterr().out

    def test_gateway_exclusivity(self, fixture_paths, capsys):
        rc = main(
            [
                "index",
                "--corpus",
                str(fixture_paths["corpus"]),
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
                "--endpoint",
                "http://example/v1",
            ]
        )
        assert rc == 1
        assert "not both" in capsys.readouterr().err

    def test_no_gateway_configured(self, fixture_paths, capsys):
        rc = main(
            [
                "index",
                "--corpus",
                str(fixture_paths["corpus"]),
                "--index",
                str(fixture_paths["index"]),
            ]
        )
        assert rc == 1
        assert "gateway" in capsys.readouterr().err


class TestAddCommand:
    def test_add_reports_rebridged(self, tmp_path, fixture_paths, capsys):
        film_only = tmp_path / "film.jsonl"
        write_corpus(AYLWIN_CORPUS[:1], film_only)
        assert (
            main(
                [
                    "index",
                    "--corpus",
                    str(film_only),
                    "--index",
                    str(fixture_paths["index"]),
                    "--mock-script",
                    str(fixture_paths["script"]),
                ]
            )
            == 0
        )
        doc_path = tmp_path / "bio.json"
        doc = AYLWIN_CORPUS[1]
        doc_path.write_text(
            json.dumps({"doc_id": doc.doc_id, "title": doc.title, "text": doc.text})
        )
        capsys.readouterr()
        rc = main(
            [
                "add",
                str(doc_path),
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "rebridged entities: henry edwards" in out

    def test_duplicate_doc_rejected(self, tmp_path, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        doc = AYLWIN_CORPUS[0]
        doc_path = tmp_path / "dup.json"
        doc_path.write_text(
            json.dumps({"doc_id": doc.doc_id, "title": doc.title, "text": doc.text})
        )
        rc = main(
            [
                "add",
                str(doc_path),
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 1
        assert "already indexed" in capsys.readouterr().err


class TestQueryCommand:
    def test_fixture_question(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(
            [
                "query",
                AYLWIN_QUESTION,
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert f"answer: {AYLWIN_GOLD}" in out
        assert "llm_calls: 1" in out
        assert "(bridging)" in out

    def test_kb_zero_excludes_bridging(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(
            [
                "query",
                AYLWIN_QUESTION,
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
                "--kb",
                "0",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "(bridging)" not in out
        assert "answer: Henry Edwards" in out

    def test_json_output(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(
            [
                "query",
                AYLWIN_QUESTION,
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["script"]),
                "--json",
            ]
        )
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["answer"] == AYLWIN_GOLD
        assert payload["llm_calls"] == 1
        assert any(e["kind"] == "bridging" for e in payload["selected_context"])

    def test_ircot_mode_reports_calls(self, fixture_paths, capsys):
        # rebuild the index with the ircot-capable script for identical store
        rc = main(
            [
                "index",
                "--corpus",
                str(fixture_paths["corpus"]),
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["ircot_script"]),
            ]
        )
        assert rc == 0
        capsys.readouterr()
        rc = main(
            [
                "query",
                AYLWIN_QUESTION,
                "--index",
                str(fixture_paths["index"]),
                "--mock-script",
                str(fixture_paths["ircot_script"]),
                "--mode",
                "ircot",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "llm_calls: 3" in out
        assert f"answer: {AYLWIN_GOLD}" in out

    def test_ircot_done_at_step_one(self, tmp_path, capsys):
        corpus = tmp_path / "widgets.jsonl"
        write_corpus(widget_corpus(4), corpus)
        script = write_json(widget_script_ircot(1, 4), tmp_path / "ircot1.json")
        index = tmp_path / "widx"
        assert (
            main(
                [
                    "index",
                    "--corpus",
                    str(corpus),
                    "--index",
                    str(index),
                    "--mock-script",
                    str(script),
                    "--stage1",
                    "chunking",
                ]
            )
            == 0
        )
        capsys.readouterr()
        rc = main(
            [
                "query",
                "Which part is widget number 2 assembled from?",
                "--index",
                str(index),
                "--mock-script",
                str(script),
                "--mode",
                "ircot",
            ]
        )
        assert rc == 0
        assert "llm_calls: 2" in capsys.readouterr().out


class TestEvalCommand:
    def test_eval_writes_reports_and_figures(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(
            [
                "eval",
                "--index",
                str(fixture_paths["index"]),
                "--dataset",
                str(fixture_paths["dataset"]),
                "--out",
                str(fixture_paths["out"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        report = json.loads((fixture_paths["out"] / "report.json").read_text())
        assert report["aggregates"]["em"] == 100.0
        assert f"{report['aggregates']['em']:.1f}" in out  # printed table matches file
        assert (fixture_paths["out"] / "per_question.jsonl").exists()
        assert (fixture_paths["out"] / "metrics.png").exists()
        assert (fixture_paths["out"] / "by_type.png").exists()  # dataset has types

    def test_kb_sweep_writes_one_report_per_value(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(
            [
                "eval",
                "--index",
                str(fixture_paths["index"]),
                "--dataset",
                str(fixture_paths["dataset"]),
                "--out",
                str(fixture_paths["out"]),
                "--mock-script",
                str(fixture_paths["script"]),
                "--kb",
                "0,1,2,3,5",
            ]
        )
        assert rc == 0
        for kb in (0, 1, 2, 3, 5):
            assert (fixture_paths["out"] / f"kb_{kb}" / "report.json").exists()
        assert (fixture_paths["out"] / "kb_sweep.png").exists()
        # with no bridging allowed the scripted naive answer is wrong
        kb0 = json.loads((fixture_paths["out"] / "kb_0" / "report.json").read_text())
        kb3 = json.loads((fixture_paths["out"] / "kb_3" / "report.json").read_text())
        assert kb0["aggregates"]["em"] < kb3["aggregates"]["em"]

    def test_missing_dataset(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        rc = main(
            [
                "eval",
                "--index",
                str(fixture_paths["index"]),
                "--dataset",
                "/nonexistent/ds.jsonl",
                "--out",
                str(fixture_paths["out"]),
                "--mock-script",
                str(fixture_paths["script"]),
            ]
        )
        assert rc == 1

    def test_deterministic_reports_modulo_timings(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)

        def run(out_name: str) -> dict:
            rc = main(
                [
                    "eval",
                    "--index",
                    str(fixture_paths["index"]),
                    "--dataset",
                    str(fixture_paths["dataset"]),
                    "--out",
                    str(fixture_paths["out"] / out_name),
                    "--mock-script",
                    str(fixture_paths["script"]),
                    "--no-figures",
                ]
            )
            assert rc == 0
            return json.loads(
                (fixture_paths["out"] / out_name / "report.json").read_text()
            )

        def strip_timings(report: dict) -> dict:
            report = json.loads(json.dumps(report))
            report["run"].pop("timestamp", None)
            report["aggregates"].pop("mean_retrieval_latency", None)
            for group in (report.get("per_type") or {}).values():
                group.pop("mean_retrieval_latency", None)
            return report

        assert strip_timings(run("r1")) == strip_timings(run("r2"))


class TestInspectCommand:
    def test_inspect_output(self, fixture_paths, capsys):
        build_fixture_index(fixture_paths)
        capsys.readouterr()
        rc = main(["inspect", "--index", str(fixture_paths["index"])])
        assert rc == 0
        out = capsys.readouterr().out
        assert "entries: 4 (aku 2, bridging 2)" in out
        assert "dimension: 64" in out
        assert "bridge entities: 1" in out

    def test_missing_index(self, tmp_path, capsys):
        rc = main(["inspect", "--index", str(tmp_path / "none")])
        assert rc == 1
