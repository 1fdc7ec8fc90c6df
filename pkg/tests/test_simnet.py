import json
import os
from fractions import Fraction

import pytest

from adversaries import Adversary, Delayer, Suspender
from crypto import KeyRegistry, Signature
from errors import EngineFault, InvariantViolation, ProtocolViolation
from msc_engine import Proposal
from pc_protocols import Vote
from reactor import Broadcast, InputEvent, ProtocolEngine
from simnet import DelayPolicy, as_time, fmt_time, run, write_artifacts
from tests.helpers import pc_run, run_shipped


def test_time_parsing():
    assert as_time("6/5") == Fraction(6, 5)
    assert as_time(1.2) == Fraction(6, 5)
    assert as_time(3) == Fraction(3)
    assert fmt_time(Fraction(6, 5)) == "6/5"
    assert fmt_time(Fraction(4)) == "4"


def test_delay_policy_rejects_non_positive_delays():
    with pytest.raises(ValueError):
        DelayPolicy(delta_cap=0)
    with pytest.raises(ValueError):
        DelayPolicy(links={(0, 1): 0})
    policy = DelayPolicy(gst=5, delta_cap=2)
    assert policy.bound(Fraction(1)) == 7
    assert policy.bound(Fraction(6)) == 8


def test_same_seed_same_transcript():
    policy = DelayPolicy(gst=6, delta_cap=2, base_delay=1, fuzz_max=4)
    first = pc_run(L=3, policy=policy, seed=11)
    second = pc_run(L=3, policy=DelayPolicy(gst=6, delta_cap=2, base_delay=1, fuzz_max=4), seed=11)
    assert first.transcript_hash == second.transcript_hash
    assert first.metrics.messages == second.metrics.messages


def test_honest_links_are_clamped_after_gst():
    policy = DelayPolicy(gst=3, delta_cap=1, base_delay=1)
    result = pc_run(L=2, policy=policy, adversary=Delayer([3], extra=5))
    assert result.model_violations == []
    for engine in result.honest_engines().values():
        assert engine.result.complete
    # round 1 honest votes sent at 0 arrive by max(0, gst) + delta
    assert max(result.metrics.times("low").values()) <= 3 + 3 * 1


def test_fractional_link_delays_show_in_the_transcript():
    outcome = run_shipped("pc3_fractional_delays")
    times = {json.loads(line)["time"] for line in outcome.result.transcript.lines}
    assert "6/5" in times
    assert set(outcome.result.metrics.times("high").values()) == {Fraction(3)}


def test_suspender_windows_rotate():
    suspender = Suspender([])
    suspender.bind(KeyRegistry(4), 4, DelayPolicy.synchronized(1))
    assert suspender.suspension_end(0, Fraction(1, 2)) == 1
    assert suspender.suspension_end(1, Fraction(3, 2)) == 2
    assert suspender.suspension_end(0, Fraction(3, 2)) is None
    assert suspender.suspension_round(Fraction(9, 2)) == 4


def test_suspended_parties_still_terminate():
    result = pc_run(L=2, adversary=Suspender([]))
    assert result.metrics.suspensions
    assert result.model_violations == []
    assert all(e.result.complete for e in result.engines.values())


class _Faulty(ProtocolEngine):
    def step(self, event):
        if isinstance(event, InputEvent):
            raise ProtocolViolation("boom")
        return []


class _Chatty(ProtocolEngine):
    def step(self, event):
        if isinstance(event, InputEvent):
            return [Broadcast(Proposal("chat", 1, event.value))]
        return []


def test_engine_errors_surface_as_faults(tmp_path):
    engines = {0: _Chatty(0), 1: _Faulty(1)}
    dump = str(tmp_path / "fault.jsonl")
    with pytest.raises(EngineFault) as e:
        run(engines, DelayPolicy.synchronized(1), {0: b"hello", 1: b"x"}, fault_dump=dump)
    assert e.value.party == 1
    assert e.value.transcript == dump
    assert os.path.exists(dump)


def test_max_time_stops_the_run():
    result = pc_run(L=2, policy=DelayPolicy.synchronized(5))
    assert result.end_time == 15
    cut = run({0: _Chatty(0), 1: _Chatty(1)}, DelayPolicy.synchronized(5), {0: b"a", 1: b"b"}, max_time=2)
    assert cut.end_time == 0


class _Forger(Adversary):
    def on_send(self, sender, receiver, message, now):
        if isinstance(message, Vote):
            stolen = Signature(0, message.signature.blob)
            return [Vote(message.round, message.instance, message.sender, message.value, stolen)]
        return [message]


def test_forged_honest_signature_breaks_the_model():
    result = pc_run(L=1, adversary=_Forger([3]))
    assert result.model_violations
    with pytest.raises(InvariantViolation) as e:
        result.check_model()
    assert e.value.name == "model-soundness"


def test_write_artifacts(out_dir):
    result = pc_run(L=2)
    paths = write_artifacts(result, out_dir, "pc3_small", {"note": "unit"})
    with open(paths["metrics"], encoding="utf-8") as f:
        metrics = json.load(f)
    assert metrics["output_times"]["low"] == {str(p): "3" for p in range(4)}
    assert metrics["messages"] == 36
    assert metrics["transcript_hash"] == result.transcript_hash
    assert metrics["note"] == "unit"
    with open(paths["transcript"], encoding="utf-8") as f:
        assert sum(1 for _ in f) == len(result.transcript.lines)
