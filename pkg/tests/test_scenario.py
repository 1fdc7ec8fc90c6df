import glob
import json
import os

import pytest

import invariants
from errors import InvariantViolation, ScenarioError
from scenario import assemble, execute, load_scenario, make_inputs, parse_scenario
from tests.helpers import SCENARIO_DIR, scenario_path

BASE = {"schema_version": 1, "protocol": "pc3", "n": 4, "f": 1, "L": 2}


def scenario(**changes):
    data = dict(BASE)
    data.update(changes)
    return parse_scenario(data)


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(SCENARIO_DIR, "*.toml"))))
def test_shipped_scenarios_load(path):
    s = load_scenario(path)
    assert s.name == os.path.splitext(os.path.basename(path))[0]
    assert s.schema_version == 1


@pytest.mark.parametrize("changes,where", [
    ({"n": 3}, "3f+1"),
    ({"protocol": "pc_5f1", "n": 5}, "5f+1"),
    ({"schema_version": 2}, "schema_version"),
    ({"codec": "compact", "protocol": "graded"}, "compact"),
    ({"checks": ["no_such_check"]}, "no_such_check"),
    ({"adversary": [{"kind": "silent", "parties": [1, 2]}]}, "exceed"),
    ({"adversary": [{"kind": "silent", "parties": [9]}]}, "outside"),
])
def test_invalid_scenarios_are_rejected(changes, where):
    with pytest.raises(ScenarioError) as e:
        scenario(**changes)
    assert where in str(e.value)


def test_unknown_fields_name_their_path():
    with pytest.raises(ScenarioError) as e:
        scenario(delay={"base_delay": 1, "jitter": 3})
    assert e.value.path == "delay.jitter"


def test_adversary_options_must_fit_the_strategy():
    with pytest.raises(ScenarioError) as e:
        scenario(adversary=[{"kind": "silent", "parties": [1], "split": "half"}])
    assert e.value.path == "adversary.0"
    ok = scenario(adversary=[{"kind": "equivocate", "parties": [1], "split": "parity"}])
    assert ok.adversary[0].kwargs() == {"kind": "equivocate", "parties": [1], "split": "parity"}


def test_base_delay_must_not_exceed_cap():
    with pytest.raises(ScenarioError):
        scenario(delay={"base_delay": 2, "delta_cap": 1})


def test_load_errors(tmp_path):
    with pytest.raises(ScenarioError) as e:
        load_scenario(str(tmp_path / "missing.toml"))
    assert "not found" in str(e.value)
    broken = tmp_path / "broken.toml"
    broken.write_text("protocol = \n", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(str(broken))


def test_overrides_replace_file_values():
    s = load_scenario(scenario_path("pc3_faultfree_n4"), seed=42, codec="compact")
    assert s.seed == 42
    assert s.codec == "compact"


def test_input_modes():
    identical = make_inputs(scenario(L=3))
    assert set(identical.values()) == {(b"e0", b"e1", b"e2")}
    prefixed = make_inputs(scenario(L=3, inputs={"mode": "common_prefix", "common": 1}))
    assert prefixed[2] == (b"e0", b"p2e1", b"p2e2")
    explicit = make_inputs(scenario(L=2, inputs={"mode": "explicit", "vectors": [["a"], ["a", "b"], [], ["c"]]}))
    assert explicit[1] == (b"a", b"b")
    assert make_inputs(scenario(protocol="msc")) == {p: None for p in range(4)}
    seeded = scenario(L=3, inputs={"mode": "random", "generator_seed": 5})
    assert make_inputs(seeded) == make_inputs(seeded)
    with pytest.raises(ScenarioError):
        make_inputs(scenario(inputs={"mode": "explicit", "vectors": [["a"]]}))


def test_assembly_picks_engines_and_codec():
    assembly = assemble(scenario(codec="compact"))
    assert assembly.codec.name == "compact"
    assert all(e.cfg.prefix_signatures for e in assembly.engines.values())
    spc = assemble(scenario(protocol="spc", codec="compact"))
    assert spc.codec.config_for("spc/v3").L == 4
    assert spc.codec.config_for("spc/v1").L == 2


def test_execute_writes_artifacts(out_dir):
    outcome = execute(load_scenario(scenario_path("pc3_faultfree_n4")), out_dir=out_dir)
    with open(outcome.artifacts["metrics"], encoding="utf-8") as f:
        metrics = json.load(f)
    assert metrics["output_times"]["low"] == {"0": "3", "1": "3", "2": "3", "3": "3"}
    assert metrics["messages"] == 36
    assert metrics["checks"] == outcome.passed
    assert metrics["violation"] is None
    assert os.path.exists(outcome.artifacts["transcript"])


def test_execute_writes_the_commit_log(out_dir):
    outcome = execute(load_scenario(scenario_path("msc_faultfree_n4")), out_dir=out_dir)
    with open(outcome.artifacts["commits"], encoding="utf-8") as f:
        rows = [json.loads(line) for line in f]
    assert len(rows) == 12
    assert [r["slot"] for r in rows[:4]] == [1, 1, 1, 1]


def test_compact_and_plain_runs_agree():
    plain = execute(load_scenario(scenario_path("pc3_faultfree_n4")), write=False)
    compact = execute(load_scenario(scenario_path("pc3_compact_n4")), write=False)
    assert compact.result.metrics.bytes < plain.result.metrics.bytes
    assert compact.summary["high_lengths"] == plain.summary["high_lengths"]


def check_always_fails(result):
    raise InvariantViolation("planted", "for the test", result.seed)


def test_violation_points_at_the_transcript(out_dir, monkeypatch):
    monkeypatch.setattr(invariants, "checks_for", lambda protocol: [check_always_fails])
    with pytest.raises(InvariantViolation) as e:
        execute(scenario(seed=9), out_dir=out_dir)
    assert e.value.name == "planted"
    assert e.value.seed == 9
    assert e.value.transcript.endswith("transcript.jsonl")
    assert os.path.exists(e.value.transcript)
