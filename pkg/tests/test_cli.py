"""The ``pgg`` command: run, report, validate, fixtures."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from pgg_harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_VIOLATIONS, main
from pgg_harness.manifest import interpolate, load_manifest
from pgg_harness.errors import ConfigError
from pgg_harness.plotting import svg_bytes
from pgg_harness.report import CURVE_COLUMNS, read_csv, render_from_csv
from pgg_harness.runner import persist_transcripts

from helpers import cell, constant_batch

SCRIPTED = ["--agent", "scripted:AlwaysContribute(10)", "--agent", "scripted:Defector"]


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    res = CliRunner().invoke(main, ["run", *SCRIPTED, "--games", "5", "--out", str(out)], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    return out


class TestRun:
    def test_study1_scripted(self, demo_run):
        files = sorted((demo_run / "transcripts").glob("*.jsonl"))
        assert len(files) == 18
        summary = json.loads((demo_run / "run_summary.json").read_text())
        assert len(summary["cells"]) == 18 and summary["games"] == 90
        assert summary["invalid_games"] == 0 and summary["llm_calls"] == 0
        assert "elapsed_seconds" in summary

    def test_same_seed_same_bytes(self, demo_run, tmp_path):
        invoke("run", *SCRIPTED, "--games", "5", "--parallelism", "4", "--out", tmp_path)
        for f in (demo_run / "transcripts").glob("*.jsonl"):
            assert (tmp_path / "transcripts" / f.name).read_bytes() == f.read_bytes()

    def test_study3_self_copies(self, tmp_path):
        m = tmp_path / "m.yaml"
        m.write_text(
            "study: Study3\n"
            "agents: [{scripted: Matcher}, {scripted: Matcher}, {scripted: Matcher}, {scripted: Matcher}]\n"
            "games: 2\n"
            f"out: {tmp_path / 'out'}\n"
        )
        res = invoke("run", "--manifest", m)
        assert res.exit_code == 0, res.output
        assert len(list((tmp_path / "out" / "transcripts").glob("*.jsonl"))) == 6

    def test_replay_without_fixture(self, tmp_path):
        m = tmp_path / "m.yaml"
        m.write_text(f"agents: ['openai:gpt-4o']\ngateway: {{mode: replay}}\nout: {tmp_path / 'out'}\n")
        res = invoke("run", "--manifest", m)
        assert res.exit_code == EXIT_CONFIG
        assert "config error" in res.output and "fixture" in res.output
        assert not (tmp_path / "out").exists()

    def test_no_agents(self, tmp_path):
        res = invoke("run", "--out", tmp_path)
        assert res.exit_code == EXIT_CONFIG

    def test_live_without_key_is_gateway_error(self, tmp_path):
        res = invoke("run", "--agent", "openai:gpt-4o", "--agent", "openai:gpt-4o", "--games", "1",
                     "--pairing", "CC", "--condition", "NoName", "--gateway", "live", "--out", tmp_path)
        assert res.exit_code == 3 and "gateway error" in res.output


class TestManifest:
    def test_interpolation(self, monkeypatch):
        monkeypatch.setenv("PROXY", "http://p")
        assert interpolate({"a": ["${PROXY}/v1"]}) == {"a": ["http://p/v1"]}

    def test_unset_variable(self, monkeypatch):
        monkeypatch.delenv("NOPE_NOT_SET", raising=False)
        with pytest.raises(ConfigError):
            interpolate("${NOPE_NOT_SET}")

    def test_load(self, tmp_path):
        p = tmp_path / "m.yaml"
        p.write_text(
            "agents:\n"
            "  - {provider: openai, model: gpt-4o, display_name: GPT-4o}\n"
            "  - 'scripted:EndgameDefector(6)'\n"
            "pairings: [CS]\n"
            "gateway: {mode: record, fixture: f.jsonl, retry_budget: 1}\n"
        )
        m = load_manifest(p)
        assert m.agents[0].label == "GPT-4o" and m.agents[1].params == {"k": 6}
        assert m.gateway == "record" and m.policy.retry_budget == 1 and m.num_rounds == 20

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "m.yaml"
        p.write_text("agents: [\n")
        with pytest.raises(ConfigError):
            load_manifest(p)


def write_pair(tmp_path: Path, name_value: int, noname_value: int, games: int = 50) -> list[Path]:
    a = persist_transcripts(constant_batch(cell("Name", "CS"), name_value, games), tmp_path / "name.jsonl")
    b = persist_transcripts(constant_batch(cell("NoName", "CS"), noname_value, games), tmp_path / "noname.jsonl")
    return [a, b]


class TestReport:
    def test_delta_grid_bolded(self, tmp_path):
        paths = write_pair(tmp_path, 6, 10)
        res = invoke("report", *paths, "--mode", "deltas", "--out", tmp_path / "r")
        assert res.exit_code == 0, res.output
        md = (tmp_path / "r" / "deltas.md").read_text()
        assert "| Study 1, Alpha | **-4.000** |" in md
        rows = read_csv(tmp_path / "r" / "deltas.csv")
        assert [(r["delta_mean"], r["significant"]) for r in rows] == [("-4.0", "true")] * 2
        assert (tmp_path / "r" / "deltas.svg").read_text().count("font-weight: 700") == 2

    def test_curves_columns_and_flat_band(self, tmp_path):
        paths = write_pair(tmp_path, 6, 10, games=4)
        invoke("report", *paths, "--mode", "curves", "--out", tmp_path / "r")
        rows = read_csv(tmp_path / "r" / "curves.csv")
        assert tuple(rows[0]) == CURVE_COLUMNS
        assert len(rows) == 2 * 2 * 20
        assert {r["ci_half"] for r in rows} == {"0.0"}
        assert {(r["condition"], r["mean"]) for r in rows} == {("Name", "6.0"), ("NoName", "10.0")}

    @pytest.mark.parametrize("mode, csv", [("curves", "curves.csv"), ("deltas", "deltas.csv")])
    def test_figure_rebuilds_from_csv(self, demo_run, tmp_path, mode, csv):
        paths = sorted((demo_run / "transcripts").glob("*.jsonl"))
        invoke("report", *paths, "--mode", mode, "--out", tmp_path)
        rebuilt = svg_bytes(render_from_csv(mode, tmp_path / csv))
        assert rebuilt == (tmp_path / csv.replace(".csv", ".svg")).read_bytes()

    def test_sentiment_mock_judge(self, tmp_path):
        res = invoke("run", "--agent", "openai:gpt-4o=GPT-4o", "--agent", "anthropic:claude-sonnet-4=Sonnet 4",
                     "--games", "3", "--rounds", "4", "--pairing", "CS", "--pairing", "SS",
                     "--gateway", "mock", "--out", tmp_path / "run")
        assert res.exit_code == 0, res.output
        paths = sorted((tmp_path / "run" / "transcripts").glob("*.jsonl"))
        res = invoke("report", *paths, "--mode", "sentiment", "--out", tmp_path / "r")
        assert res.exit_code == 0, res.output
        scores = read_csv(tmp_path / "r" / "sentiment_scores.csv")
        assert len(scores) == 4 * 3 * 4 * 2
        assert not any("GPT-4o" in s["masked_text"] or "Sonnet 4" in s["masked_text"] for s in scores)
        corr = read_csv(tmp_path / "r" / "sentiment_corr.csv")
        assert len(corr) == 8 and {c["status"] for c in corr} <= {"ok", "no-variance"}
        rebuilt = svg_bytes(render_from_csv("sentiment", tmp_path / "r" / "sentiment_corr.csv"))
        assert rebuilt == (tmp_path / "r" / "sentiment_corr.svg").read_bytes()

    def test_no_inputs(self):
        res = invoke("report", "--mode", "curves")
        assert res.exit_code == 2 and "at least one" in res.output

    def test_mixed_schema(self, tmp_path):
        paths = write_pair(tmp_path, 6, 10, games=2)
        rec = json.loads(paths[1].read_text().splitlines()[0])
        rec["schema_version"] = 0
        paths[1].write_text(json.dumps(rec) + "\n")
        res = invoke("report", *paths, "--mode", "curves", "--out", tmp_path / "r")
        assert res.exit_code == EXIT_IO and "io error" in res.output

    def test_deltas_need_pairs(self, tmp_path):
        paths = write_pair(tmp_path, 6, 10, games=2)
        res = invoke("report", paths[0], "--mode", "deltas", "--out", tmp_path / "r")
        assert res.exit_code == EXIT_CONFIG


class TestValidate:
    def test_clean(self, demo_run):
        paths = sorted((demo_run / "transcripts").glob("*.jsonl"))
        res = invoke("validate", *paths)
        assert res.exit_code == 0
        assert "90 games checked, 0 violations" in res.output

    def test_corrupted_gain(self, demo_run, tmp_path):
        src = demo_run / "transcripts" / "study1__CS__name.jsonl"
        lines = src.read_text().splitlines()
        rec = json.loads(lines[2])
        rec["rounds"][6]["gains"][0] += 1
        # keep cumulative sums consistent with the edited gain so only conservation breaks
        for r in rec["rounds"][6:]:
            r["cumulative"][0] += 1
        lines[2] = json.dumps(rec)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        res = invoke("validate", bad)
        assert res.exit_code == EXIT_VIOLATIONS
        violations = [ln for ln in res.output.splitlines() if ": conservation:" in ln]
        assert len(violations) == 1 and "game 2, round 7" in violations[0]
        assert "1 violations" in res.output

    def test_empty_list(self):
        res = invoke("validate")
        assert res.exit_code == 2 and "Usage" in res.output

    def test_unreadable_file(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text("{not json\n")
        res = invoke("validate", p)
        assert res.exit_code == EXIT_IO and "CorruptLine" in res.output


class TestFixtures:
    def test_record_then_replay(self, tmp_path):
        fx = tmp_path / "fx.jsonl"
        common = ["--agent", "openai:gpt-4o=GPT-4o", "--agent", "openai:gpt-4o=GPT-4o", "--games", "2",
                  "--rounds", "3", "--pairing", "NN", "--condition", "Name", "--study", "Study2"]
        res = invoke("fixtures", "record", *common, "--fixture", fx, "--out", tmp_path / "a")
        assert res.exit_code == 0 and "recorded 12 calls" in res.output
        res = invoke("run", *common, "--gateway", "replay", "--fixture", fx, "--out", tmp_path / "b")
        assert res.exit_code == 0, res.output
        name = "transcripts/study2__NN__name.jsonl"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        res = invoke("fixtures", "inspect", fx)
        assert "entries: 12" in res.output and "gpt-4o: 12" in res.output

    def test_record_needs_fixture(self, tmp_path):
        res = invoke("fixtures", "record", *SCRIPTED, "--out", tmp_path)
        assert res.exit_code == 2
