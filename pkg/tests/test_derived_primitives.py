from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crypto import KeyRegistry
from derived_primitives import (BinaryEngine, GradedOutput, GradedVectorEngine, graded_from_pc, pc_from_graded)
from errors import PreconditionViolation
from prefix_core import is_prefix
from reactor import InputEvent
from tests.helpers import run_shipped


def test_graded_from_pc_maps_lengths_to_grades():
    assert graded_from_pc((), ()) == GradedOutput(None, 0)
    assert graded_from_pc((), (b"v",)) == GradedOutput(b"v", 1)
    assert graded_from_pc((b"v",), (b"v",)) == GradedOutput(b"v", 2)
    with pytest.raises(PreconditionViolation):
        graded_from_pc((b"v",), ())
    with pytest.raises(PreconditionViolation):
        graded_from_pc((b"v",), (b"w",))
    with pytest.raises(PreconditionViolation):
        graded_from_pc((), (b"v", b"w"))


def test_graded_output_rejects_inconsistent_pairs():
    with pytest.raises(PreconditionViolation):
        GradedOutput(b"v", 0)
    with pytest.raises(PreconditionViolation):
        GradedOutput(None, 2)
    with pytest.raises(PreconditionViolation):
        GradedOutput(b"v", 3)


def test_pc_from_graded_examples():
    g = [GradedOutput(b"a", 2), GradedOutput(b"b", 1), GradedOutput(b"c", 2), GradedOutput(None, 0),
         GradedOutput(b"e", 2)]
    assert pc_from_graded(g) == ((b"a",), (b"a", b"b", b"c"))
    assert pc_from_graded([]) == ((), ())
    assert pc_from_graded([GradedOutput(None, 0), GradedOutput(b"x", 2)]) == ((), ())


grades = st.one_of(st.just(GradedOutput(None, 0)),
                   st.builds(GradedOutput, st.sampled_from([b"a", b"b"]), st.sampled_from([1, 2])))


@settings(max_examples=200, deadline=None)
@given(st.lists(grades, max_size=6))
def test_pc_from_graded_low_is_prefix_of_high(items):
    low, high = pc_from_graded(items)
    assert is_prefix(low, high)
    assert len(high) <= len(items)
    assert all(g.grade == 2 for g in items[:len(low)])


def test_graded_consensus_grades_unanimous_input_two_at_three():
    outcome = run_shipped("graded_faultfree_n4")
    metrics = outcome.result.metrics
    assert set(metrics.times("grade").values()) == {Fraction(3)}
    assert outcome.summary["grades"] == {str(p): 2 for p in range(4)}


def test_parallel_graded_needs_full_length_input():
    engine = GradedVectorEngine(0, 4, 1, 3, KeyRegistry(4))
    with pytest.raises(PreconditionViolation):
        engine.step(InputEvent((b"a",)))


def test_parallel_graded_recombines_into_prefix_outputs():
    outcome = run_shipped("graded_faultfree_n4", L=3, inputs={"mode": "common_prefix", "common": 1})
    assert "graded_reduction" in outcome.passed
    for engine in outcome.result.engines.values():
        low, high = engine.result
        assert low[:1] == (b"e0",)


def test_binary_mixed_inputs_agree():
    outcome = run_shipped("binary_mixed_n4")
    decisions = set(outcome.summary["decisions"].values())
    assert len(decisions) == 1
    assert decisions <= {0, 1}
    assert outcome.passed == ["decided", "decision_agreement", "binary_validity"]


def test_binary_unanimous_input_is_decided():
    outcome = run_shipped("binary_mixed_n4", inputs={"mode": "identical"})
    assert set(outcome.summary["decisions"].values()) == {1}


def test_binary_rejects_non_bits():
    engine = BinaryEngine(0, 4, 1, KeyRegistry(4))
    with pytest.raises(PreconditionViolation):
        engine.step(InputEvent(2))


def test_validated_consensus_decides_first_valid_proposal():
    outcome = run_shipped("validated_faultfree_n4")
    assert set(outcome.summary["decisions"].values()) == {b"ok:alpha"}


def test_validated_consensus_without_valid_inputs_stays_undecided():
    outcome = run_shipped("validated_faultfree_n4",
                          inputs={"mode": "explicit", "values": ["no", "no", "no", "no"], "valid_prefix": "ok:"})
    for engine in outcome.result.engines.values():
        assert engine.decided
        assert engine.decision is None
