"""Declarative scenarios: TOML schema, engine assembly, run + checks + artifacts."""
from __future__ import annotations

import inspect
import json
import logging
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Optional, Union

import numpy as np
import toml
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

import invariants
from adversaries import ADVERSARIES, Adversary, build_adversary
from crypto import KeyRegistry
from derived_primitives import BinaryEngine, GradedEngine, GradedVectorEngine, ValidatedEngine
from errors import InvariantViolation, ScenarioError
from msc_engine import MscConfig, MscEngine
from pc_protocols import PcConfig, PcEngine, Variant, VerifierPool
from simnet import DelayPolicy, RunResult, as_time, fmt_time, run, write_artifacts
from spc_engine import SpcConfig, SpcEngine
from wire_compact import CompactCodec
from wire_format import PlainCodec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PC_PROTOCOLS = {"pc3": Variant.THREE_ROUND, "pc_opt": Variant.OPTIMISTIC, "pc_5f1": Variant.FAST_5F1}
COMPACT_PROTOCOLS = ("pc3", "pc_opt", "pc_5f1", "spc", "msc")

Time = Union[int, float, str]
Protocol = Literal["pc3", "pc_opt", "pc_5f1", "spc", "msc", "graded", "binary", "validated"]


class LinkDelay(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sender: int
    receiver: int
    delay: Time


class DelaySpec(BaseModel):
    """Partial-synchrony parameters; times are ints, floats or "p/q" strings"""
    model_config = ConfigDict(extra="forbid")

    base_delay: Time = 1
    delta_cap: Time = 1
    gst: Time = 0
    fuzz_max: Optional[Time] = None
    links: list[LinkDelay] = []

    @model_validator(mode="after")
    def check_times(self):
        for name in ("base_delay", "delta_cap", "gst", "fuzz_max"):
            value = getattr(self, name)
            if value is not None and as_time(value) < 0:
                raise ValueError(f"{name} must be non-negative")
        if as_time(self.base_delay) > as_time(self.delta_cap):
            raise ValueError("base_delay must not exceed delta_cap")
        return self

    def policy(self) -> DelayPolicy:
        return DelayPolicy(gst=self.gst, delta_cap=self.delta_cap, base_delay=self.base_delay,
                           links={(l.sender, l.receiver): l.delay for l in self.links}, fuzz_max=self.fuzz_max)


class AdversarySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["none", "silent", "equivocate", "censor", "delayer", "suspender", "withhold_body",
                  "doctored_proof"]
    parties: list[int] = []
    split: Optional[str] = None
    reveal_to: Optional[list[int]] = None
    targets: Optional[list[str]] = None
    views: Optional[list[int]] = None
    links: Optional[list[list[int]]] = None
    extra: Optional[Time] = None
    round_length: Optional[Time] = None
    start: Optional[Time] = None
    order: Optional[list[int]] = None

    def kwargs(self) -> dict:
        """Constructor arguments for the strategy; options it does not take are rejected"""
        accepted = set(inspect.signature(ADVERSARIES[self.kind].__init__).parameters)
        out = {"kind": self.kind, "parties": list(self.parties)}
        for name in self.model_fields_set - {"kind", "parties"}:
            if name not in accepted:
                raise ValueError(f"adversary {self.kind!r} takes no option {name!r}")
            value = getattr(self, name)
            out[name] = as_time(value) if name in ("extra", "round_length", "start") else value
        return out


class InputSpec(BaseModel):
    """How honest inputs are produced.

    identical: every party gets the same vector (or value / bit 1);
    common_prefix: `common` shared leading entries then party-specific ones;
    random: entries drawn from a small alphabet with `generator_seed`;
    explicit: `vectors`, `values` or `bits` given per party.
    """
    model_config = ConfigDict(extra="forbid")

    mode: Literal["identical", "common_prefix", "random", "explicit"] = "identical"
    common: int = 0
    alphabet: int = 2
    generator_seed: Optional[int] = None
    vectors: Optional[list[list[str]]] = None
    values: Optional[list[str]] = None
    bits: Optional[list[int]] = None
    valid_prefix: Optional[str] = None


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int
    name: str = "scenario"
    protocol: Protocol
    n: int
    f: int
    L: int = 1
    codec: Literal["plain", "compact"] = "plain"
    backend: Literal["mac", "ed25519"] = "mac"
    optimistic: bool = False
    delay: DelaySpec = DelaySpec()
    adversary: list[AdversarySpec] = []
    inputs: InputSpec = InputSpec()
    slots: int = 1
    seed: int = 0
    out: Optional[str] = None
    max_time: Optional[Time] = None
    checks: Optional[list[str]] = None

    @model_validator(mode="after")
    def check_bounds(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}")
        if self.f < 0 or self.L < 1 or self.slots < 1:
            raise ValueError("f must be >= 0, L and slots >= 1")
        if self.protocol == "pc_5f1":
            if self.n < 5 * self.f + 1:
                raise ValueError(f"pc_5f1 requires n >= 5f+1 (n={self.n}, f={self.f})")
        elif self.n < 3 * self.f + 1:
            raise ValueError(f"{self.protocol} requires n >= 3f+1 (n={self.n}, f={self.f})")
        byzantine = set()
        for spec in self.adversary:
            if any(not 0 <= p < self.n for p in spec.parties):
                raise ValueError(f"adversary {spec.kind!r} names a party outside 0..{self.n - 1}")
            byzantine.update(spec.parties)
        if len(byzantine) > self.f:
            raise ValueError(f"{len(byzantine)} byzantine parties exceed f={self.f}")
        if self.codec == "compact" and self.protocol not in COMPACT_PROTOCOLS:
            raise ValueError(f"compact codec is not available for {self.protocol}")
        if self.checks is not None:
            known = {c.__name__.removeprefix("check_") for c in invariants.checks_for(self.protocol)}
            unknown = sorted(set(self.checks) - known)
            if unknown:
                raise ValueError(f"unknown checks for {self.protocol}: {unknown}")
        return self

    @property
    def byzantine(self) -> frozenset:
        return frozenset(p for spec in self.adversary for p in spec.parties)


# Step 1: loading

def _loc(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "scenario"


def parse_scenario(data: dict) -> Scenario:
    try:
        scenario = Scenario.model_validate(data)
        for idx, spec in enumerate(scenario.adversary):
            try:
                spec.kwargs()
            except ValueError as e:
                raise ScenarioError(f"adversary.{idx}", str(e)) from e
        return scenario
    except ValidationError as e:
        first = e.errors()[0]
        raise ScenarioError(_loc(first), first.get("msg", "invalid value")) from e


def load_scenario(path: str, **overrides) -> Scenario:
    """Read a TOML scenario; keyword overrides (seed, codec, out) replace file values"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = toml.load(f)
    except FileNotFoundError as e:
        raise ScenarioError(path, "file not found") from e
    except toml.TomlDecodeError as e:
        raise ScenarioError(path, f"invalid TOML: {e}") from e
    data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_scenario(data)


# Step 2: inputs

def _entries(values) -> tuple:
    return tuple(v.encode("utf-8") for v in values)


def make_inputs(s: Scenario) -> dict:
    spec = s.inputs
    rng = np.random.default_rng(spec.generator_seed if spec.generator_seed is not None else s.seed)
    parties = range(s.n)
    if s.protocol == "msc":
        return {p: None for p in parties}
    if spec.mode == "explicit":
        return _explicit_inputs(s)
    if s.protocol == "binary":
        if spec.mode == "random":
            return {p: int(rng.integers(0, 2)) for p in parties}
        return {p: 1 if spec.mode == "identical" else p % 2 for p in parties}
    if s.protocol == "validated":
        return {p: f"{spec.valid_prefix or ''}payload-{p}".encode() for p in parties}
    if s.protocol == "graded" and s.L == 1:
        if spec.mode == "random":
            return {p: f"v{int(rng.integers(0, spec.alphabet))}".encode() for p in parties}
        return {p: b"v" if spec.mode == "identical" else f"v{p}".encode() for p in parties}
    if spec.mode == "identical":
        return {p: tuple(f"e{k}".encode() for k in range(s.L)) for p in parties}
    if spec.mode == "common_prefix":
        common = min(spec.common, s.L)
        return {p: tuple(f"e{k}".encode() for k in range(common)) +
                tuple(f"p{p}e{k}".encode() for k in range(common, s.L)) for p in parties}
    return {p: tuple(f"e{k}x{int(rng.integers(0, spec.alphabet))}".encode() for k in range(s.L)) for p in parties}


def _explicit_inputs(s: Scenario) -> dict:
    spec = s.inputs
    if s.protocol == "binary":
        source, field_name = spec.bits, "bits"
    elif s.protocol in ("graded", "validated") and s.L == 1:
        source, field_name = spec.values, "values"
    else:
        source, field_name = spec.vectors, "vectors"
    if source is None or len(source) != s.n:
        raise ScenarioError(f"inputs.{field_name}", f"explicit mode needs one entry per party ({s.n})")
    if field_name == "bits":
        return {p: int(b) for p, b in enumerate(source)}
    if field_name == "values":
        return {p: v.encode("utf-8") for p, v in enumerate(source)}
    for p, vec in enumerate(source):
        if len(vec) > s.L:
            raise ScenarioError(f"inputs.vectors.{p}", f"length {len(vec)} exceeds L={s.L}")
    return {p: _entries(vec) for p, vec in enumerate(source)}


# Step 3: engines and codec

@dataclass
class Assembly:
    engines: dict
    registry: KeyRegistry
    policy: DelayPolicy
    adversary: Adversary
    codec: object
    inputs: dict
    checks: list = field(default_factory=list)


def _spc_config(s: Scenario, prefix_signatures: bool) -> SpcConfig:
    variant = Variant.OPTIMISTIC if s.optimistic else Variant.THREE_ROUND
    return SpcConfig(n=s.n, f=s.f, L=s.L if s.protocol == "spc" else 1, vpc_variant=variant,
                     prefix_signatures=prefix_signatures)


def _msc_config(s: Scenario, prefix_signatures: bool) -> MscConfig:
    return MscConfig(n=s.n, f=s.f, slots=s.slots, optimistic=s.optimistic, prefix_signatures=prefix_signatures)


def build_engines(s: Scenario, registry: KeyRegistry) -> dict:
    pool = VerifierPool(registry)
    compact = s.codec == "compact"
    if s.protocol in PC_PROTOCOLS:
        cfg = PcConfig(n=s.n, f=s.f, L=s.L, variant=PC_PROTOCOLS[s.protocol], prefix_signatures=compact)
        return {p: PcEngine(p, cfg, registry, pool.get(cfg)) for p in range(s.n)}
    if s.protocol == "spc":
        cfg = _spc_config(s, compact)
        return {p: SpcEngine(p, cfg, registry, pool) for p in range(s.n)}
    if s.protocol == "msc":
        cfg = _msc_config(s, compact)
        return {p: MscEngine(p, cfg, registry, pool) for p in range(s.n)}
    if s.protocol == "graded":
        if s.L == 1:
            return {p: GradedEngine(p, s.n, s.f, registry, pool=pool) for p in range(s.n)}
        return {p: GradedVectorEngine(p, s.n, s.f, s.L, registry, pool=pool) for p in range(s.n)}
    if s.protocol == "binary":
        return {p: BinaryEngine(p, s.n, s.f, registry, pool=pool) for p in range(s.n)}
    prefix = (s.inputs.valid_prefix or "").encode("utf-8")
    return {p: ValidatedEngine(p, s.n, s.f, registry, lambda payload: payload.startswith(prefix), pool=pool)
            for p in range(s.n)}


_VIEW = re.compile(r"/v(\d+)$")


def build_codec(s: Scenario):
    if s.codec == "plain":
        return PlainCodec()
    if s.protocol in PC_PROTOCOLS:
        return CompactCodec(PcConfig(n=s.n, f=s.f, L=s.L, variant=PC_PROTOCOLS[s.protocol], prefix_signatures=True))
    spc_cfg = _spc_config(s, True) if s.protocol == "spc" else _msc_config(s, True).spc_config(1)

    @lru_cache(maxsize=None)
    def resolve(instance: str) -> PcConfig:
        match = _VIEW.search(instance)
        view = int(match.group(1)) if match else 1
        return spc_cfg.vpc_config(view).with_instance(instance)

    return CompactCodec(spc_cfg.vpc_config(1), resolve)


def assemble(s: Scenario) -> Assembly:
    registry = KeyRegistry(s.n, backend=s.backend, seed=s.seed)
    try:
        adversary = build_adversary([spec.kwargs() for spec in s.adversary], s.f)
    except ValueError as e:
        raise ScenarioError("adversary", str(e)) from e
    checks = invariants.checks_for(s.protocol)
    if s.checks is not None:
        checks = [c for c in checks if c.__name__.removeprefix("check_") in s.checks]
    return Assembly(build_engines(s, registry), registry, s.delay.policy(), adversary, build_codec(s),
                    make_inputs(s), checks)


# Step 4: run, check, write

@dataclass
class Outcome:
    scenario: Scenario
    result: RunResult
    passed: list
    summary: dict
    artifacts: dict = field(default_factory=dict)


def summarize_run(s: Scenario, result: RunResult) -> dict:
    """Protocol-level facts for metrics.json; no wall-clock values"""
    summary = {"scenario": s.name, "protocol": s.protocol, "n": s.n, "f": s.f, "L": s.L,
               "byzantine": sorted(result.byzantine)}
    honest = result.honest_engines()
    if s.protocol == "msc":
        reference = honest[min(honest)]
        censored = invariants.censored_slots(result)
        summary.update({
            "slots_decided": len(reference.decided()),
            "committed": len(reference.log),
            "censored_slots": len(censored),
            "censored_slot_ids": censored,
            "demotions": [list(d) for d in reference.demotions],
            "final_rank": list(reference.ranks[max(reference.ranks)]),
        })
    elif s.protocol in ("binary", "validated"):
        summary["decisions"] = {str(p): e.decision for p, e in sorted(honest.items())}
    elif s.protocol == "graded":
        summary["grades"] = {str(p): getattr(e.output, "grade", None) for p, e in sorted(honest.items())
                             if hasattr(e, "output")}
    else:
        summary["high_lengths"] = {str(p): None if e.result.high is None else len(e.result.high)
                                   for p, e in sorted(honest.items())}
    return summary


def write_commit_log(result: RunResult, path: str):
    honest = {p: e for p, e in result.honest_engines().items() if isinstance(e, MscEngine)}
    if not honest:
        return None
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in honest[min(honest)].commit_log():
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def execute(s: Scenario, out_dir: Optional[str] = None, write: bool = True, keep_transcript: bool = True) -> Outcome:
    """Run a scenario to quiescence, write artifacts and check every enabled invariant.

    Raises InvariantViolation (with a transcript pointer when artifacts were
    written) on the first failing property.
    """
    out_dir = out_dir or s.out or os.getenv("PREFIXCONSENSUS_OUT_DIR", "runs")
    target = os.path.join(out_dir, s.name)
    assembly = assemble(s)
    logger.info("scenario %s: protocol=%s n=%d f=%d codec=%s seed=%d", s.name, s.protocol, s.n, s.f, s.codec,
                s.seed)
    result = run(assembly.engines, assembly.policy, assembly.inputs, assembly.adversary, assembly.codec,
                 seed=s.seed, registry=assembly.registry, keep_transcript=keep_transcript,
                 max_time=as_time(s.max_time) if s.max_time is not None else None,
                 fault_dump=os.path.join(target, "transcript.jsonl") if write else None)
    violation = None
    passed: list = []
    try:
        passed = invariants.run_checks(result, assembly.checks)
    except InvariantViolation as e:
        violation = e
    summary = summarize_run(s, result)
    summary["checks"] = passed
    summary["violation"] = violation.name if violation else None
    artifacts = {}
    if write:
        artifacts = write_artifacts(result, out_dir, s.name, summary)
        commits = write_commit_log(result, os.path.join(target, "commits.jsonl"))
        if commits:
            artifacts["commits"] = commits
    if violation is not None:
        raise InvariantViolation(violation.name, violation.detail, violation.seed,
                                 artifacts.get("transcript")) from violation
    logger.info("scenario %s finished at t=%s, %d checks passed", s.name, fmt_time(result.end_time), len(passed))
    return Outcome(s, result, passed, summary, artifacts)
