import json
import os

import pytest
from click.testing import CliRunner

import invariants
from errors import InvariantViolation
from main import EXIT_INVARIANT, EXIT_OK, EXIT_SCENARIO, cli
from tests.helpers import pc_run, scenario_path
from wire_format import encode_message


@pytest.fixture
def runner():
    return CliRunner()


def test_run_prints_stage_times_and_writes_metrics(runner, out_dir):
    result = runner.invoke(cli, ["--quiet", "run", "--scenario", scenario_path("pc3_faultfree_n4"), "--out", out_dir])
    assert result.exit_code == EXIT_OK, result.output
    assert "low: t=3 (4 parties)" in result.output
    assert "messages: 36" in result.output
    with open(os.path.join(out_dir, "pc3_faultfree_n4", "metrics.json"), encoding="utf-8") as f:
        metrics = json.load(f)
    assert metrics["output_times"]["low"] == {"0": "3", "1": "3", "2": "3", "3": "3"}


def test_run_msc_prints_the_slot_summary(runner, out_dir):
    result = runner.invoke(cli, ["--quiet", "run", "--scenario", scenario_path("msc_censor_f1"), "--out", out_dir])
    assert result.exit_code == EXIT_OK, result.output
    assert "censored slots: 1" in result.output
    assert "demotions: [[1, 2]]" in result.output


def test_invalid_scenario_exits_two(runner, tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('schema_version = 1\nprotocol = "pc3"\nn = 3\nf = 1\n', encoding="utf-8")
    result = runner.invoke(cli, ["run", "--scenario", str(path)])
    assert result.exit_code == EXIT_SCENARIO
    assert "scenario error" in result.output


def test_violation_exits_three_with_seed(runner, out_dir, monkeypatch):
    def planted(result):
        raise InvariantViolation("planted", "for the test", result.seed)

    monkeypatch.setattr(invariants, "checks_for", lambda protocol: [planted])
    result = runner.invoke(cli, ["--quiet", "run", "--scenario", scenario_path("pc3_faultfree_n4"), "--seed", "5",
                                 "--out", out_dir])
    assert result.exit_code == EXIT_INVARIANT
    assert "planted" in result.output
    assert "seed=5" in result.output
    assert "transcript.jsonl" in result.output


def test_decode_hex_frame(runner):
    vote = pc_run(L=2).engines[0].qcs[1].votes[0]
    result = runner.invoke(cli, ["decode", encode_message(vote).hex()])
    assert result.exit_code == EXIT_OK, result.output
    assert "kind=vote" in result.output
    assert "codec=plain" in result.output


def test_decode_rejects_garbage(runner, tmp_path):
    assert runner.invoke(cli, ["decode", "zz"]).exit_code == EXIT_SCENARIO
    truncated = runner.invoke(cli, ["decode", "5058010001000000ff"])
    assert truncated.exit_code == EXIT_SCENARIO
    assert "decode error at header.body_len" in truncated.output
    frame = tmp_path / "frame.bin"
    frame.write_bytes(b"PX\x01\x00")
    assert runner.invoke(cli, ["decode", "--file", str(frame)]).exit_code == EXIT_SCENARIO


def test_check_trie_suite(runner, tmp_path):
    result = runner.invoke(cli, ["--quiet", "check", "trie", "--runs", "30", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_OK, result.output
    assert "trie: 30 runs, all passed" in result.output
    with open(tmp_path / "check_trie.json", encoding="utf-8") as f:
        assert json.load(f)["passed"] == {"trie_oracle": 30}


def test_check_upperbound_small(runner):
    result = runner.invoke(cli, ["--quiet", "check", "upperbound", "--runs", "3", "--n", "4", "--protocol", "pc3"])
    assert result.exit_code == EXIT_OK, result.output
    assert "upper_bound: 3" in result.output


@pytest.mark.slow
def test_sweep_writes_table_and_fit(runner, out_dir):
    result = runner.invoke(cli, ["--quiet", "sweep", "--scenario", scenario_path("pc3_faultfree_n4"), "--n", "4",
                                 "--n", "7", "--out", out_dir])
    assert result.exit_code == EXIT_OK, result.output
    assert "message exponent" in result.output
    assert os.path.exists(os.path.join(out_dir, "sweep_pc3_faultfree_n4.csv"))
