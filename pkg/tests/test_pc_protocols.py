from fractions import Fraction

import pytest
from pydantic import ValidationError

from adversaries import DoctoredProof, Equivocate, Silent
from crypto import KeyRegistry
from errors import PreconditionViolation
from pc_protocols import (PcConfig, PcEngine, QuorumCertificate, Variant, Verifier, Vote, certified_x_values,
                          pairwise_consistent_values, predicate_high, predicate_low, qc1_certify, qc2_certify,
                          qc3_certify)
from prefix_core import is_prefix, mcp, vector
from reactor import Broadcast, Deliver, InputEvent
from tests.helpers import pc_run


def round1_vote(registry, cfg, sender, value):
    value = tuple(value)
    return Vote(1, cfg.instance, sender, value, registry.sign_vector(sender, cfg.tag(1), value))


def test_config_enforces_resilience():
    with pytest.raises(ValidationError):
        PcConfig(n=3, f=1, L=1)
    with pytest.raises(ValidationError):
        PcConfig(n=5, f=1, L=1, variant=Variant.FAST_5F1)
    assert PcConfig(n=6, f=1, L=1, variant=Variant.FAST_5F1).qc1_support == 4
    assert PcConfig(n=4, f=1, L=1).quorum == 3


def test_qc1_certifies_prefix_supported_by_f_plus_one(registry):
    cfg = PcConfig(n=4, f=1, L=3)
    votes = [round1_vote(registry, cfg, 0, vector("a", "b", "c")),
             round1_vote(registry, cfg, 1, vector("a", "b", "d")),
             round1_vote(registry, cfg, 2, vector("a", "x"))]
    assert qc1_certify(votes, cfg) == vector("a", "b")
    opt = cfg.model_copy(update={"variant": Variant.OPTIMISTIC})
    votes = [round1_vote(registry, opt, p, v.value) for p, v in enumerate(votes)]
    assert qc1_certify(votes, opt) == (vector("a", "b"), vector("a"))


def test_certifiers_need_a_quorum(registry):
    cfg = PcConfig(n=4, f=1, L=2)
    with pytest.raises(PreconditionViolation):
        qc1_certify([round1_vote(registry, cfg, 0, vector("a"))], cfg)


def test_verifier_rejects_forged_and_oversized_votes(registry):
    cfg = PcConfig(n=4, f=1, L=2)
    verifier = Verifier(cfg, registry)
    good = round1_vote(registry, cfg, 0, vector("a"))
    assert verifier.vote(good)
    forged = Vote(1, cfg.instance, 1, good.value, good.signature)
    assert not verifier.vote(forged)
    too_long = round1_vote(registry, PcConfig(n=4, f=1, L=3), 0, vector("a", "b", "c"))
    assert not verifier.vote(too_long)


def test_fault_free_three_round_outputs_at_three():
    result = pc_run(n=4, f=1, L=4)
    assert set(result.metrics.times("low").values()) == {Fraction(3)}
    assert set(result.metrics.times("high").values()) == {Fraction(3)}
    assert result.metrics.messages == 36
    for engine in result.engines.values():
        assert engine.result.low == engine.result.high == engine.input


def test_fault_free_three_round_n7():
    result = pc_run(n=7, f=2, L=2)
    assert set(result.metrics.times("high").values()) == {Fraction(3)}
    assert result.metrics.messages == 3 * 7 * 6


def test_optimistic_outputs_opt_in_two_rounds():
    result = pc_run(n=4, f=1, L=3, variant=Variant.OPTIMISTIC)
    assert set(result.metrics.times("opt").values()) == {Fraction(2)}
    assert max(result.metrics.times("high").values()) <= 4
    assert max(result.metrics.times("low").values()) <= 4


def test_optimistic_with_diverging_inputs_finishes_by_four():
    inputs = {p: (b"a", f"x{p}".encode()) for p in range(4)}
    result = pc_run(n=4, f=1, L=2, variant=Variant.OPTIMISTIC, inputs=inputs)
    for engine in result.engines.values():
        assert engine.result.opt == (b"a",)
        assert engine.result.complete
    assert max(result.metrics.times("low").values()) == 4


def test_fast_variant_outputs_at_two():
    result = pc_run(n=6, f=1, L=3, variant=Variant.FAST_5F1)
    assert set(result.metrics.times("low").values()) == {Fraction(2)}
    assert set(result.metrics.times("high").values()) == {Fraction(2)}


def test_mixed_inputs_keep_upper_bound_and_validity():
    inputs = {0: vector("a", "b", "c"), 1: vector("a", "b"), 2: vector("a", "c"), 3: vector("a", "b", "d")}
    result = pc_run(n=4, f=1, L=3, inputs=inputs)
    lows = [e.result.low for e in result.engines.values()]
    highs = [e.result.high for e in result.engines.values()]
    common = mcp(inputs.values())
    for low in lows:
        assert is_prefix(common, low)
        assert all(is_prefix(low, high) for high in highs)


@pytest.mark.parametrize("adversary", [Silent([3]), Equivocate([3]), DoctoredProof([3])])
def test_one_byzantine_party_keeps_outputs_consistent(adversary):
    inputs = {p: vector("a", f"b{p % 2}") for p in range(4)}
    result = pc_run(n=4, f=1, L=2, inputs=inputs, adversary=adversary)
    honest = result.honest_engines().values()
    assert all(e.result.complete for e in honest)
    highs = [e.result.high for e in honest]
    for e in honest:
        assert all(is_prefix(e.result.low, h) for h in highs)
    assert pairwise_consistent_values(certified_x_values(list(honest)))


def test_doctored_votes_are_dropped():
    result = pc_run(n=4, f=1, L=2, adversary=DoctoredProof([3]))
    assert sum(result.metrics.dropped[p] for p in result.honest) > 0


def test_outputs_carry_verifiable_proofs():
    result = pc_run(n=4, f=1, L=3)
    engine = result.engines[0]
    out = engine.result
    assert predicate_low(out.low, out.low_proof, engine.cfg, engine.verifier)
    assert predicate_high(out.high, out.high_proof, engine.cfg, engine.verifier)
    assert not predicate_high(out.high[:-1], out.high_proof, engine.cfg, engine.verifier)
    assert not predicate_low(out.low, None, engine.cfg, engine.verifier)


def test_votes_before_input_are_buffered():
    registry = KeyRegistry(4, seed=1)
    cfg = PcConfig(n=4, f=1, L=1)
    engine = PcEngine(0, cfg, registry)
    early = [round1_vote(registry, cfg, p, vector("a")) for p in (1, 2, 3)]
    for p, vote in zip((1, 2, 3), early):
        assert engine.step(Deliver(p, vote)) == []
    actions = engine.step(InputEvent(vector("a")))
    rounds = [a.message.round for a in actions if isinstance(a, Broadcast)]
    assert rounds == [1, 2]


def test_input_longer_than_capacity_is_rejected():
    engine = PcEngine(0, PcConfig(n=4, f=1, L=1), KeyRegistry(4))
    with pytest.raises(PreconditionViolation):
        engine.step(InputEvent(vector("a", "b")))


def test_three_round_certifiers_compose(registry):
    cfg = PcConfig(n=4, f=1, L=2)
    votes = [Vote(2, cfg.instance, p, v, registry.sign_vector(p, cfg.tag(2), v))
             for p, v in enumerate([vector("a"), vector("a", "b"), vector("a")])]
    assert qc2_certify(votes, cfg) == vector("a")
    votes3 = [Vote(3, cfg.instance, p, v, registry.sign_vector(p, cfg.tag(3), v))
              for p, v in enumerate([vector("a"), vector("a", "b"), vector()])]
    assert qc3_certify(votes3, cfg) == (vector(), vector("a", "b"))
    assert QuorumCertificate(3, tuple(votes3)).values == [vector("a"), vector("a", "b"), vector()]
