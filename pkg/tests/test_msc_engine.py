from fractions import Fraction

import pytest
from pydantic import ValidationError

from crypto import KeyRegistry, digest
from msc_engine import MscConfig, MscEngine, Proposal, SlotRecord, censorship_audit, default_payload, update_rank
from reactor import Broadcast, Deliver, InputEvent, Output, SetTimer
from tests.helpers import run_shipped


@pytest.mark.parametrize("rank,high_len,expected", [
    ((1, 2, 3, 4), 4, (1, 2, 3, 4)),
    ((1, 2, 3, 4), 2, (1, 2, 4, 3)),
    ((3, 1, 4, 2), 0, (1, 4, 2, 3)),
])
def test_update_rank_moves_first_excluded_party_last(rank, high_len, expected):
    assert update_rank(rank, (b"d",) * high_len) == expected


def test_update_rank_rejects_overlong_high():
    with pytest.raises(ValueError):
        update_rank((0, 1), (b"a", b"b", b"c"))


def test_config_validation():
    with pytest.raises(ValidationError):
        MscConfig(n=3, f=1)
    with pytest.raises(ValidationError):
        MscConfig(n=4, f=1, slots=0)
    cfg = MscConfig(n=4, f=1, slots=2)
    assert cfg.spc_config(2).instance == "msc/s2"
    assert cfg.spc_config(2).L == 4


def test_censorship_audit_ignores_slots_before_gst():
    a, b = digest(b"a"), digest(b"b")
    slots = {
        1: SlotRecord(Fraction(0), frozenset({a, b}), frozenset({a})),
        2: SlotRecord(Fraction(8), frozenset({a, b}), frozenset({a})),
        3: SlotRecord(Fraction(16), frozenset({a, b}), frozenset({a, b})),
    }
    assert censorship_audit(slots, 0) == [1, 2]
    assert censorship_audit(slots, 4) == [2]


def test_first_slot_opens_on_input():
    engine = MscEngine(0, MscConfig(n=4, f=1, slots=2), KeyRegistry(4))
    actions = engine.step(InputEvent(None))
    assert isinstance(actions[0], Output) and actions[0].key == (1,)
    proposal = actions[1].message
    assert isinstance(actions[1], Broadcast) and proposal.payload == default_payload(0, 1)
    assert isinstance(actions[2], SetTimer) and actions[2].key == ("msc", "slot", 1)
    assert engine.step(InputEvent(None)) == []


def test_invalid_and_future_proposals():
    engine = MscEngine(0, MscConfig(n=4, f=1, slots=3), KeyRegistry(4),
                       validity=lambda proposal: proposal.payload != b"bad")
    engine.step(InputEvent(None))
    assert engine.step(Deliver(1, Proposal("msc", 1, b"bad"))) == []
    assert engine.dropped == 1
    assert engine.step(Deliver(2, Proposal("msc", 2, b"early"))) == []
    assert 2 in engine.slots[2].buffer
    assert engine.step(Deliver(3, Proposal("msc", 9, b"x"))) == []
    assert engine.dropped == 2


def test_fault_free_commit_and_slot_timing():
    outcome = run_shipped("msc_faultfree_n4")
    metrics = outcome.result.metrics
    assert set(metrics.times("commit", (1,)).values()) == {Fraction(4)}
    assert set(metrics.times("slot", (2,)).values()) == {Fraction(8)}
    assert outcome.summary["slots_decided"] == 3
    assert outcome.summary["committed"] == 12
    assert outcome.summary["demotions"] == []
    engine = outcome.result.engines[0]
    assert [r.payload for r in engine.log if r.slot == 1] == [default_payload(p, 1) for p in range(4)]
    logs = {tuple(r.digest for r in e.log) for e in outcome.result.engines.values()}
    assert len(logs) == 1


def test_censored_proposer_is_demoted_once():
    outcome = run_shipped("msc_censor_f1")
    summary = outcome.summary
    assert summary["censored_slots"] == 1
    assert summary["censored_slot_ids"] == [1]
    assert summary["demotions"] == [[1, 2]]
    assert summary["final_rank"] == [0, 1, 3, 2]
    assert summary["slots_decided"] == 10
    assert "censorship" in outcome.passed


@pytest.mark.slow
def test_leaderless_suspension_still_commits_every_slot():
    outcome = run_shipped("msc_leaderless_n7")
    assert outcome.summary["slots_decided"] == 3
    assert outcome.result.metrics.suspensions
    assert "msc_termination" in outcome.passed
