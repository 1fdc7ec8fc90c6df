"""Complexity sweeps and seeded property suites driven by the CLI."""
from __future__ import annotations

import itertools
import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

import invariants
from adversaries import Equivocate
from crypto import KeyRegistry, MessageDescriptor
from errors import InvariantViolation
from pc_protocols import PcConfig, PcEngine, QuorumCertificate, Variant, VerifierPool
from prefix_core import BOT, longest_supported_prefix, mcp
from scenario import Scenario, execute, parse_scenario
from simnet import DelayPolicy, fmt_time, run
from wire_compact import (CompactQC2, CompactRange, DivergenceWitness, PaddedVector, SignedSet, compact_qc,
                          equivalence_harness, verify_compact)
from wire_format import PlainCodec

logger = logging.getLogger(__name__)

DEFAULT_NS = (4, 7)
MESSAGE_SWEEP_NS = (4, 7, 10, 13, 16)
BYTE_SWEEP_NS = (4, 7, 10)

CATALOGUE = {
    "pc3": ("none", "silent", "equivocate", "delayer", "doctored_proof"),
    "pc_opt": ("none", "silent", "equivocate", "delayer", "doctored_proof"),
    "pc_5f1": ("none", "silent", "equivocate", "delayer", "doctored_proof"),
    "spc": ("none", "silent", "equivocate", "censor", "delayer", "doctored_proof", "withhold_body"),
    "msc": ("none", "silent", "equivocate", "censor", "delayer", "withhold_body"),
    "binary": ("none", "silent", "equivocate", "delayer"),
    "validated": ("none", "silent", "equivocate", "censor", "delayer"),
    "graded": ("none", "silent", "equivocate", "delayer", "doctored_proof"),
}


def max_f(protocol: str, n: int) -> int:
    return (n - 1) // 5 if protocol == "pc_5f1" else (n - 1) // 3


# Step 1: sweeps

@dataclass
class SweepReport:
    table: pd.DataFrame
    exponents: dict
    paths: dict = field(default_factory=dict)


def fit_exponent(ns: Iterable[int], values: Iterable[float]) -> float:
    """Slope of log(value) against log(n)"""
    x = np.log(np.asarray(list(ns), dtype=float))
    y = np.log(np.asarray(list(values), dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def _sweep_point(template: Scenario, n: int, l_equals_n: bool) -> dict:
    data = template.model_dump(exclude_none=True)
    data.update({"n": n, "f": max_f(template.protocol, n), "name": f"{template.name}_n{n}", "adversary": []})
    if l_equals_n:
        data["L"] = n
    s = parse_scenario(data)
    outcome = execute(s, write=False, keep_transcript=False)
    metrics = outcome.result.metrics
    return {"n": n, "f": s.f, "L": s.L, "codec": s.codec, "messages": metrics.messages, "bytes": metrics.bytes,
            "end_time": fmt_time(outcome.result.end_time)}


def sweep(template: Scenario, ns: Optional[Iterable[int]] = None, l_equals_n: bool = True,
          out_dir: Optional[str] = None, workers: int = 1, quiet: bool = False) -> SweepReport:
    """Run the template once per n, tabulate message/byte totals and fit log-log growth exponents"""
    ns = sorted(set(ns or (BYTE_SWEEP_NS if l_equals_n else MESSAGE_SWEEP_NS)))
    if len(ns) < 2:
        raise ValueError("a sweep needs at least two values of n")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(tqdm(pool.map(lambda n: _sweep_point(template, n, l_equals_n), ns), total=len(ns),
                         desc=f"sweep {template.name}", disable=quiet))
    table = pd.DataFrame(rows).sort_values("n").reset_index(drop=True)
    exponents = {"messages": fit_exponent(table["n"], table["messages"]),
                 "bytes": fit_exponent(table["n"], table["bytes"])}
    report = SweepReport(table, exponents)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"sweep_{template.name}.csv")
        table.to_csv(csv_path, index=False)
        fit_path = os.path.join(out_dir, f"sweep_{template.name}.json")
        with open(fit_path, "w", encoding="utf-8") as f:
            json.dump({"scenario": template.name, "codec": template.codec, "ns": ns, "exponents": exponents}, f,
                      indent=2, ensure_ascii=False)
        report.paths = {"table": csv_path, "fit": fit_path}
    logger.info("sweep %s: exponents %s", template.name, exponents)
    return report


# Step 2: seeded property runs

@dataclass
class SuiteReport:
    name: str
    runs: int = 0
    passed: Counter = field(default_factory=Counter)
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"suite": self.name, "runs": self.runs, "passed": dict(sorted(self.passed.items())),
                "stats": self.stats}


def random_adversary(rng: np.random.Generator, protocol: str, n: int, f: int) -> list:
    kind = str(rng.choice(CATALOGUE[protocol]))
    if kind == "none" or f == 0:
        return []
    parties = sorted(int(p) for p in rng.choice(n, size=int(rng.integers(1, f + 1)), replace=False))
    spec = {"kind": kind, "parties": parties}
    honest = [p for p in range(n) if p not in parties]
    if kind == "equivocate":
        spec["split"] = str(rng.choice(["half", "parity"]))
    elif kind == "censor":
        spec["reveal_to"] = [int(rng.choice(honest))]
        if protocol == "spc":
            spec["targets"] = ["new_view"]
    elif kind == "withhold_body":
        spec["reveal_to"] = [int(rng.choice(honest))]
    return [spec]


def random_scenario(seed: int, protocol: str, n: int, fuzz: bool = True, **overrides) -> Scenario:
    """Seeded scenario over the adversary catalogue, with fuzzed pre-GST delays when `fuzz` is set"""
    rng = np.random.default_rng(seed)
    f = max_f(protocol, n)
    gst = int(rng.choice([0, 3, 6])) if fuzz else 0
    delay = {"base_delay": 1, "delta_cap": 2, "gst": gst}
    if gst:
        delay["fuzz_max"] = 4
    data = {
        "schema_version": 1,
        "name": f"{protocol}_n{n}_seed{seed}",
        "protocol": protocol,
        "n": n,
        "f": f,
        "L": int(rng.integers(1, 5)) if protocol not in ("binary", "validated") else 1,
        "seed": seed,
        "delay": delay,
        "adversary": random_adversary(rng, protocol, n, f),
        "inputs": {"mode": "random", "alphabet": 2},
        "slots": int(rng.integers(1, 4)),
        "max_time": 2000,
    }
    if protocol == "graded" and rng.random() < 0.5:
        data["L"] = 1
    data.update(overrides)
    return parse_scenario(data)


def _one_run(s: Scenario, checks: list) -> tuple:
    data = s.model_copy(update={"checks": [c.__name__.removeprefix("check_") for c in checks]})
    outcome = execute(data, write=False, keep_transcript=False)
    return outcome.passed, outcome


def property_suite(name: str, protocols: Iterable[str], checks_of: Callable[[str], list], runs: int,
                   ns: Iterable[int] = DEFAULT_NS, seed: int = 0, workers: int = 1, fuzz: bool = True,
                   quiet: bool = False, collect: Optional[Callable] = None, **overrides) -> SuiteReport:
    """`runs` seeded scenarios cycling through protocols and n; raises on the first violating seed"""
    protocols, ns = list(protocols), list(ns)
    plan = [(seed + i, protocols[i % len(protocols)], ns[(i // len(protocols)) % len(ns)]) for i in range(runs)]
    report = SuiteReport(name)

    def job(item):
        run_seed, protocol, n = item
        s = random_scenario(run_seed, protocol, n, fuzz, **overrides)
        return _one_run(s, [c for c in checks_of(protocol)])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for passed, outcome in tqdm(pool.map(job, plan), total=len(plan), desc=f"check {name}", disable=quiet):
            report.runs += 1
            report.passed.update(passed)
            if collect is not None:
                collect(report, outcome)
    logger.info("suite %s: %d runs passed", name, report.runs)
    return report


def _select(*names: str) -> Callable[[str], list]:
    def checks_of(protocol: str) -> list:
        return [c for c in invariants.checks_for(protocol) if c.__name__.removeprefix("check_") in names]
    return checks_of


PC_FAMILY = ("pc3", "pc_opt", "pc_5f1", "spc")


def check_upperbound(runs: int = 1000, **kw) -> SuiteReport:
    return property_suite("upperbound", kw.pop("protocols", PC_FAMILY), _select("upper_bound"), runs, **kw)


def check_validity(runs: int = 1000, **kw) -> SuiteReport:
    return property_suite("validity", kw.pop("protocols", PC_FAMILY), _select("validity", "optimistic"), runs, **kw)


def check_consistency(runs: int = 1000, **kw) -> SuiteReport:
    return property_suite("consistency", kw.pop("protocols", ("pc3", "pc_opt", "pc_5f1")),
                          _select("consistency", "fast_lemma"), runs, **kw)


def check_availability(runs: int = 1000, **kw) -> SuiteReport:
    return property_suite("availability", kw.pop("protocols", PC_FAMILY), _select("availability"), runs, **kw)


def check_agreement(runs: int = 1000, **kw) -> SuiteReport:
    return property_suite("agreement", kw.pop("protocols", ("spc", "msc", "binary", "validated")),
                          _select("spc_agreement", "skip_conservatism", "msc_agreement", "ranking_agreement",
                                  "decision_agreement"), runs, **kw)


def check_proofs(runs: int = 1000, **kw) -> SuiteReport:
    protocols = kw.pop("protocols", PC_FAMILY)
    ns = kw.pop("ns", DEFAULT_NS)
    seed = kw.pop("seed", 0)
    report = SuiteReport("proofs")
    dropped = 0
    for i in tqdm(range(runs), desc="check proofs", disable=kw.get("quiet", False)):
        protocol, n = protocols[i % len(protocols)], ns[(i // len(protocols)) % len(ns)]
        f = max_f(protocol, n)
        if f == 0:
            continue
        s = random_scenario(seed + i, protocol, n, kw.get("fuzz", True),
                            adversary=[{"kind": "doctored_proof", "parties": list(range(n - f, n))}])
        passed, outcome = _one_run(s, _select("proofs", "upper_bound", "consistency", "spc_agreement")(protocol))
        report.runs += 1
        report.passed.update(passed)
        dropped += sum(outcome.result.metrics.dropped.get(p, 0) for p in outcome.result.honest)
    report.stats["doctored_messages_dropped"] = dropped
    return report


def check_graded(runs: int = 200, **kw) -> SuiteReport:
    return property_suite("graded", ("graded",), _select("graded", "graded_reduction"), runs, **kw)


def check_censorship(f: int = 1, slots: int = 100, runs: int = 1, seed: int = 0, quiet: bool = False,
                     **_) -> SuiteReport:
    """Persistent censors and equivocators over post-GST slots; censored slots stay within f"""
    n = 3 * f + 1
    report = SuiteReport("censorship")
    worst = 0
    for i in tqdm(range(runs), desc="check censorship", disable=quiet):
        rng = np.random.default_rng(seed + i)
        byzantine = sorted(int(p) for p in rng.choice(n, size=f, replace=False))
        honest = [p for p in range(n) if p not in byzantine]
        adversary = []
        for k, party in enumerate(byzantine):
            if k % 2 == 0:
                adversary.append({"kind": "censor", "parties": [party], "reveal_to": [int(rng.choice(honest))]})
            else:
                adversary.append({"kind": "equivocate", "parties": [party]})
        s = parse_scenario({"schema_version": 1, "name": f"censorship_f{f}_seed{seed + i}", "protocol": "msc",
                            "n": n, "f": f, "slots": slots, "seed": seed + i, "adversary": adversary})
        passed, outcome = _one_run(s, invariants.MSC_CHECKS)
        report.runs += 1
        report.passed.update(passed)
        worst = max(worst, outcome.summary["censored_slots"])
    report.stats.update({"n": n, "f": f, "slots": slots, "max_censored_slots": worst})
    return report


def check_leaderless(runs: int = 200, n: int = 4, seed: int = 0, quiet: bool = False, slots: int = 3,
                     **_) -> SuiteReport:
    """Round-robin suspension plus f-1 silent parties; spc and msc still terminate"""
    f = max_f("spc", n)
    report = SuiteReport("leaderless")
    for i in tqdm(range(runs), desc="check leaderless", disable=quiet):
        protocol = ("spc", "msc")[i % 2]
        adversary = [{"kind": "suspender", "parties": []}]
        if f > 1:
            adversary.append({"kind": "silent", "parties": list(range(n - f + 1, n))})
        s = parse_scenario({"schema_version": 1, "name": f"leaderless_{protocol}_seed{seed + i}",
                            "protocol": protocol, "n": n, "f": f, "L": n, "slots": slots, "seed": seed + i,
                            "adversary": adversary, "inputs": {"mode": "random"}, "max_time": 5000})
        checks = [c for c in invariants.checks_for(protocol) if c is not invariants.check_censorship]
        passed, _ = _one_run(s, checks)
        report.runs += 1
        report.passed.update(passed)
    return report


# Step 3: oracle equivalences

def brute_force_supported_prefix(vectors: list, k: int) -> tuple:
    """Longest mcp over all size-k subsets; lexicographically smallest among equals"""
    candidates = {mcp(subset) for subset in itertools.combinations(vectors, k)}
    depth = max(len(c) for c in candidates)
    return min(c for c in candidates if len(c) == depth)


def random_vector_set(rng: np.random.Generator, max_n: int = 7, max_len: int = 4, alphabet: int = 2) -> list:
    size = int(rng.integers(1, max_n + 1))
    return [tuple(bytes([int(rng.integers(0, alphabet))]) for _ in range(int(rng.integers(0, max_len + 1))))
            for _ in range(size)]


def check_trie(runs: int = 500, seed: int = 0, quiet: bool = False, **_) -> SuiteReport:
    rng = np.random.default_rng(seed)
    report = SuiteReport("trie")
    for _ in tqdm(range(runs), desc="check trie", disable=quiet):
        vectors = random_vector_set(rng)
        k = int(rng.integers(1, len(vectors) + 1))
        expected = brute_force_supported_prefix(vectors, k)
        got = longest_supported_prefix(vectors, k)
        if got != expected:
            raise InvariantViolation("trie-oracle", f"k={k} vectors={vectors}: trie {got} != subsets {expected}",
                                     seed)
        report.runs += 1
        report.passed["trie_oracle"] += 1
    return report


_EQUIVALENCE_SETTINGS = ((Variant.THREE_ROUND, 4, 1), (Variant.THREE_ROUND, 7, 2), (Variant.OPTIMISTIC, 4, 1),
                         (Variant.OPTIMISTIC, 7, 2), (Variant.FAST_5F1, 6, 1))


def equivalence_votes(seed: int, variant: Variant, n: int, f: int):
    """Every (cfg, registry, quorum) sampled from a seeded run with mixed inputs and an equivocator"""
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 5))
    cfg = PcConfig(n=n, f=f, L=L, variant=variant, instance=f"eq{seed}", prefix_signatures=True)
    registry = KeyRegistry(n, seed=seed)
    pool = VerifierPool(registry)
    engines = {p: PcEngine(p, cfg, registry, pool.get(cfg)) for p in range(n)}
    inputs = {p: tuple(bytes([int(rng.integers(0, 2))]) for _ in range(int(rng.integers(0, L + 1))))
              for p in range(n)}
    adversary = Equivocate(range(n - f, n)) if f and rng.random() < 0.5 else None
    result = run(engines, DelayPolicy.synchronized(1), inputs, adversary, PlainCodec(), seed=seed,
                 registry=registry, keep_transcript=False)
    for party in sorted(result.honest):
        for round_, votes in sorted(engines[party].votes.items()):
            if len(votes) < cfg.quorum:
                continue
            picks = rng.choice(len(votes), size=cfg.quorum, replace=False)
            yield cfg, registry, tuple(votes[int(i)] for i in sorted(picks))


def tampered_certificates(compact, quorum: tuple, cfg: PcConfig):
    """(name, tampered copy) pairs of a valid compact QC, each of which a verifier must reject"""
    by_sender = {v.sender: v for v in quorum}
    if isinstance(compact, CompactRange):
        yield "range-proof-kind", replace(compact, low_proof=compact)
        if compact.low != compact.high:
            yield "range-proofs-swapped", replace(compact, low_proof=compact.high_proof, high_proof=compact.low_proof)
        return
    if not isinstance(compact, CompactQC2):
        return
    x_p = compact.x_p.unpad()
    witnesses = compact.witnesses
    if len(witnesses) == 2:
        first, second = witnesses
        yield "witness-signatures-swapped", replace(compact, witnesses=(
            replace(first, signature=second.signature), replace(second, signature=first.signature)))
        yield "witness-qc1-swapped", replace(compact, witnesses=(
            replace(first, qc1=second.qc1), replace(second, qc1=first.qc1)))
    for i, w in enumerate(witnesses):
        if w.next is BOT:
            opened = replace(w, signature=by_sender[w.signer].prefix_signatures[len(x_p)])
            yield "terminal-witness-unclosed", replace(compact, witnesses=witnesses[:i] + (opened,) + witnesses[i + 1:])
    if x_p:
        # every quorum member signed x_p minus its last entry, but none of them stopped there
        shorter = x_p[:-1]
        votes = sorted(quorum, key=lambda v: v.sender)
        multisig = SignedSet(tuple(MessageDescriptor(v.sender, len(shorter), ()) for v in votes),
                             b"".join(v.prefix_signatures[len(shorter)].blob for v in votes))
        qc1 = witnesses[0].qc1 if witnesses else compact.full_qc1
        terminal = DivergenceWitness(votes[0].sender, BOT, votes[0].prefix_signatures[len(shorter)], qc1)
        yield "x_p-truncated", replace(compact, x_p=PaddedVector.pad(shorter, cfg.L), multisig=multisig,
                                       full_qc1=None, witnesses=(terminal,))


def check_equivalence(runs: int = 500, seed: int = 0, quiet: bool = False, **_) -> SuiteReport:
    """Compact certification yields exactly what plain certification yields, and tampering is caught"""
    report = SuiteReport("equivalence")
    for i in tqdm(range(runs), desc="check equivalence", disable=quiet):
        variant, n, f = _EQUIVALENCE_SETTINGS[i % len(_EQUIVALENCE_SETTINGS)]
        for cfg, registry, quorum in equivalence_votes(seed + i, variant, n, f):
            plain, compact = equivalence_harness(quorum, cfg, registry)
            if plain != compact:
                detail = f"{variant.value} round {quorum[0].round}: plain {plain} != compact {compact}"
                raise InvariantViolation("compact-equivalence", detail, seed + i)
            report.passed[variant.value] += 1
            if compact is None:
                continue
            packed = compact_qc(QuorumCertificate(quorum[0].round, quorum), cfg)
            for name, tampered in tampered_certificates(packed, quorum, cfg):
                if verify_compact(tampered, cfg, registry):
                    detail = f"{variant.value} round {quorum[0].round}: {name} certificate accepted"
                    raise InvariantViolation("compact-equivalence", detail, seed + i)
                report.passed["tampering_rejected"] += 1
        report.runs += 1
    return report


SUITES = {
    "upperbound": check_upperbound,
    "validity": check_validity,
    "consistency": check_consistency,
    "availability": check_availability,
    "agreement": check_agreement,
    "censorship": check_censorship,
    "leaderless": check_leaderless,
    "equivalence": check_equivalence,
    "trie": check_trie,
    "graded": check_graded,
    "proofs": check_proofs,
}


def run_suite(name: str, **kwargs) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](**{k: v for k, v in kwargs.items() if v is not None})
