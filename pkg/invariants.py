"""Safety and liveness properties checked against a finished simulation.

Every check takes a `RunResult` and raises `InvariantViolation` naming the
property; checks only ever look at honest parties.
"""
from __future__ import annotations

import logging
from typing import Callable

from crypto import digest
from errors import InvariantViolation, MissingPreimage
from msc_engine import MscEngine, Proposal, SlotRecord, censorship_audit
from pc_protocols import PcEngine, Variant, certified_x_values, pairwise_consistent_values, predicate_high, \
    predicate_low
from prefix_core import consistent, is_prefix, mcp
from spc_engine import SpcEngine

logger = logging.getLogger(__name__)


def _fail(name: str, detail: str, result):
    raise InvariantViolation(name, detail, getattr(result, "seed", None))


def _outputs(result) -> dict:
    """party -> object with low/high (PcOutput or SpcResult) for honest parties"""
    out = {}
    for party, engine in result.honest_engines().items():
        res = getattr(engine, "result", None)
        if res is not None and hasattr(res, "low"):
            out[party] = res
    return out


def _honest_vectors(result) -> list:
    return [tuple(v) for v in result.honest_inputs().values() if isinstance(v, (tuple, list))]


# Step 1: prefix consensus family

def check_upper_bound(result):
    outs = _outputs(result)
    for i, a in outs.items():
        for j, b in outs.items():
            if a.low is not None and b.high is not None and not is_prefix(a.low, b.high):
                _fail("upper-bound", f"low of party {i} is not a prefix of high of party {j}", result)


def check_validity(result):
    inputs = _honest_vectors(result)
    if not inputs:
        return
    floor = mcp(inputs)
    for party, res in _outputs(result).items():
        if res.low is not None and not is_prefix(floor, res.low):
            _fail("validity", f"mcp of honest inputs is not a prefix of party {party}'s low", result)


def check_consistency(result):
    outs = _outputs(result)
    highs = [(p, r.high) for p, r in outs.items() if r.high is not None]
    for idx, (i, a) in enumerate(highs):
        for j, b in highs[idx + 1:]:
            if not consistent(a, b):
                _fail("consistency", f"highs of parties {i} and {j} conflict", result)


def check_availability(result):
    inputs = _honest_vectors(result)
    for party, res in _outputs(result).items():
        for stage in ("low", "high"):
            value = getattr(res, stage)
            if value is None:
                continue
            for k, entry in enumerate(value):
                if not any(len(x) > k and x[k] == entry for x in inputs):
                    _fail("availability", f"{stage} of party {party} has index {k} no honest input carries", result)


def check_termination(result):
    for party, res in _outputs(result).items():
        if res.low is None or res.high is None:
            _fail("termination", f"party {party} did not output low and high", result)


def check_optimistic(result):
    inputs = _honest_vectors(result)
    for party, engine in result.honest_engines().items():
        res = engine.result
        if getattr(res, "opt", None) is None:
            continue
        if res.low is not None and not is_prefix(res.opt, res.low):
            _fail("optimistic-prefix", f"opt of party {party} is not a prefix of its low", result)
        if not result.byzantine and inputs and not is_prefix(mcp(inputs), res.opt):
            _fail("optimistic-validity", f"opt of party {party} misses the honest common prefix", result)


def check_fast_lemma(result):
    engines = [e for e in result.honest_engines().values() if isinstance(e, PcEngine)]
    if not pairwise_consistent_values(certified_x_values(engines)):
        _fail("fast-qc1-consistency", "QC1-certified values conflict", result)


def check_proofs(result):
    """Every honest low/high output verifies against the public predicates"""
    for party, engine in result.honest_engines().items():
        vpcs = [engine] if isinstance(engine, PcEngine) else list(getattr(engine, "vpcs", {}).values())
        for vpc in vpcs:
            res = vpc.result
            if res.low is not None and not predicate_low(res.low, res.low_proof, vpc.cfg, vpc.verifier):
                _fail("proof-soundness", f"party {party}: low of {vpc.cfg.instance} does not verify", result)
            if res.high is not None and not predicate_high(res.high, res.high_proof, vpc.cfg, vpc.verifier):
                _fail("proof-soundness", f"party {party}: high of {vpc.cfg.instance} does not verify", result)


# Step 2: strong prefix consensus

def check_spc_agreement(result):
    highs = {p: r.high for p, r in _outputs(result).items() if r.high is not None}
    if len(set(highs.values())) > 1:
        _fail("agreement", f"honest highs differ: {sorted(highs)}", result)


def _spc_engines(result) -> list:
    engines = []
    for engine in result.honest_engines().values():
        if isinstance(engine, SpcEngine):
            engines.append(engine)
        elif isinstance(engine, MscEngine):
            engines.extend(engine.spcs.values())
        elif isinstance(getattr(engine, "spc", None), SpcEngine):
            engines.append(engine.spc)
    return engines


def check_skip_conservatism(result):
    by_instance: dict = {}
    for engine in _spc_engines(result):
        by_instance.setdefault(engine.cfg.instance, []).append(engine)
    for instance, engines in by_instance.items():
        for engine in engines:
            for target, high_view in engine.indirect_log:
                for view in range(high_view + 1, target):
                    for other in engines:
                        vpc = other.vpcs.get(view)
                        if vpc is None or vpc.result.low is None:
                            continue
                        try:
                            parent = other.parent(vpc.result.low)
                        except MissingPreimage:
                            continue
                        if parent != (0, ()):
                            _fail("skip-conservatism",
                                  f"{instance}: view {view} has a non-empty low skipped by an indirect "
                                  f"certificate into view {target}", result)


# Step 3: multi-slot consensus

def _msc(result) -> dict:
    return {p: e for p, e in result.honest_engines().items() if isinstance(e, MscEngine)}


def check_msc_agreement(result):
    engines = _msc(result)
    slots = set().union(*(e.decided().keys() for e in engines.values())) if engines else set()
    for s in slots:
        decided = {p: e.decided()[s] for p, e in engines.items() if s in e.decided()}
        if len(set(decided.values())) > 1:
            _fail("slot-agreement", f"slot {s} decided differently by {sorted(decided)}", result)
        logs = [[r.digest for r in e.log if r.slot == s] for e in engines.values()]
        for a in logs:
            for b in logs:
                if not is_prefix(a, b) and not is_prefix(b, a):
                    _fail("slot-agreement", f"commit logs of slot {s} diverge", result)


def check_ranking_agreement(result):
    engines = list(_msc(result).values())
    for s in set().union(*(e.ranks.keys() for e in engines)) if engines else ():
        ranks = {e.ranks[s] for e in engines if s in e.ranks}
        if len(ranks) > 1:
            _fail("ranking-agreement", f"slot {s} rankings differ", result)


def check_msc_termination(result):
    for party, engine in _msc(result).items():
        missing = [s for s in range(1, engine.cfg.slots + 1) if s not in engine.decided()]
        if missing:
            _fail("termination", f"party {party} never decided slots {missing[:5]}", result)


def slot_records(result) -> dict:
    """Ground-truth slot records for the censorship audit, from honest proposals and decisions"""
    engines = _msc(result)
    if not engines:
        return {}
    reference = engines[min(engines)]
    records = {}
    for s, high in reference.decided().items():
        starts = [t for p, t in result.metrics.times("slot", (s,)).items() if p in result.honest]
        honest_inputs = frozenset(digest(Proposal(e.cfg.instance, s, e.payloads(p, s))) for p, e in engines.items())
        records[s] = SlotRecord(min(starts) if starts else 0, honest_inputs, frozenset(high))
    return records


def censored_slots(result) -> list:
    return censorship_audit(slot_records(result), result.extra.get("gst", 0))


def check_censorship(result, f: int = None):
    engines = _msc(result)
    if not engines:
        return
    f = f if f is not None else next(iter(engines.values())).cfg.f
    censored = censored_slots(result)
    if len(censored) > f:
        _fail("censorship-resistance", f"{len(censored)} censored slots exceed f={f}: {censored[:10]}", result)
    demotions = next(iter(engines.values())).demotions
    gst = result.extra.get("gst", 0)
    records = slot_records(result)
    for slot, party in demotions:
        # before GST honest proposals may miss the timer and get their proposer demoted
        if slot not in records or records[slot].start < gst:
            continue
        if party not in result.byzantine:
            _fail("censorship-resistance", f"slot {slot} demoted honest party {party}", result)
    if censored and demotions and max(censored) > max(s for s, _ in demotions):
        _fail("censorship-resistance", "an honest input was excluded after the last demotion", result)


# Step 4: derived primitives

def check_graded(result):
    outs = {p: e.output for p, e in result.honest_engines().items() if getattr(e, "output", None) is not None}
    items = list(outs.items())
    for i, a in items:
        for j, b in items:
            if abs(a.grade - b.grade) > 1:
                _fail("graded-agreement", f"grades of parties {i} and {j} differ by more than 1", result)
            if a.value is not None and b.value is not None and a.value != b.value:
                _fail("graded-agreement", f"parties {i} and {j} grade different values", result)
    inputs = set(result.honest_inputs().values())
    if len(inputs) == 1:
        v = next(iter(inputs))
        for p, g in outs.items():
            if (g.value, g.grade) != (v, 2):
                _fail("graded-validity", f"party {p} did not grade the unanimous input 2", result)


def check_graded_reduction(result):
    """Recombined (low, high) pairs of parallel graded instances behave like Prefix Consensus outputs"""
    pairs = {p: e.result for p, e in result.honest_engines().items()
             if isinstance(getattr(e, "result", None), tuple)}
    inputs = _honest_vectors(result)
    floor = mcp(inputs) if inputs else ()
    for i, (low_i, high_i) in pairs.items():
        if not is_prefix(low_i, high_i) or not is_prefix(floor, low_i):
            _fail("graded-reduction", f"party {i}: recombined outputs break validity or ordering", result)
        for j, (low_j, high_j) in pairs.items():
            if not is_prefix(low_i, high_j) or not consistent(high_i, high_j):
                _fail("graded-reduction", f"parties {i} and {j}: recombined outputs conflict", result)


def check_decision_agreement(result):
    decisions = {p: e.decision for p, e in result.honest_engines().items() if getattr(e, "decided", True)}
    if len(set(decisions.values())) > 1:
        _fail("agreement", f"honest decisions differ: {decisions}", result)


def check_binary_validity(result):
    inputs = set(result.honest_inputs().values())
    if len(inputs) == 1:
        bit = next(iter(inputs))
        for p, e in result.honest_engines().items():
            if e.decision != bit:
                _fail("validity", f"party {p} decided {e.decision} on unanimous input {bit}", result)


def check_decided(result):
    for p, e in result.honest_engines().items():
        if getattr(e, "decision", None) is None and not getattr(e, "decided", False):
            _fail("termination", f"party {p} did not decide", result)


PC_CHECKS: list = [check_upper_bound, check_validity, check_consistency, check_availability, check_termination,
                   check_proofs]
SPC_CHECKS: list = [check_upper_bound, check_validity, check_spc_agreement, check_availability,
                    check_skip_conservatism, check_termination, check_proofs]
MSC_CHECKS: list = [check_msc_agreement, check_ranking_agreement, check_msc_termination, check_censorship,
                    check_skip_conservatism]


def checks_for(protocol: str) -> list:
    if protocol == "pc3":
        return list(PC_CHECKS)
    if protocol == "pc_opt":
        return PC_CHECKS + [check_optimistic]
    if protocol == "pc_5f1":
        return PC_CHECKS + [check_fast_lemma]
    if protocol == "spc":
        return list(SPC_CHECKS)
    if protocol == "msc":
        return list(MSC_CHECKS)
    if protocol == "graded":
        return [check_graded, check_graded_reduction]
    if protocol == "binary":
        return [check_decided, check_decision_agreement, check_binary_validity]
    if protocol == "validated":
        return [check_decided, check_decision_agreement]
    raise ValueError(f"unknown protocol {protocol!r}")


def run_checks(result, checks: list[Callable]) -> list:
    """Run every check; raises on the first violation, returns the names that passed"""
    result.check_model()
    passed = []
    for check in checks:
        check(result)
        passed.append(check.__name__.removeprefix("check_"))
    return passed


__all__ = [name for name in dir() if name.startswith("check_")] + ["checks_for", "run_checks", "censored_slots",
                                                                   "slot_records", "Variant"]
