"""Seeded discrete-event simulator for the protocol engines.

Time is rational. Events are ordered by (time, sender, receiver, sequence);
timers and inputs use the owning party as both sender and receiver. A party's
messages to itself go through a local FIFO that is drained before the next
queued event and never count as network traffic.

Partial synchrony: every message sent at time t between two honest parties is
delivered by max(t, gst) + delta_cap. Before GST delays come from the policy
(optionally fuzzed) and the adversary's scheduling hook.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import logging
import os
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

import numpy as np

from adversaries import Adversary
from crypto import KeyRegistry, Signature
from errors import EngineFault, InvariantViolation, PrefixConsensusError
from reactor import Broadcast, Deliver, InputEvent, Output, Send, SetTimer, TimerFired
from wire_format import PlainCodec

logger = logging.getLogger(__name__)


def as_time(value) -> Fraction:
    """Fraction from int, str ("6/5", "1.2") or float (via its shortest repr)"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def fmt_time(t: Fraction) -> str:
    return str(t.numerator) if t.denominator == 1 else f"{t.numerator}/{t.denominator}"


@dataclass
class DelayPolicy:
    """Per-link delays under partial synchrony; `links` overrides `base_delay` for chosen (sender, receiver) pairs"""
    gst: Fraction = Fraction(0)
    delta_cap: Fraction = Fraction(1)
    base_delay: Fraction = Fraction(1)
    links: dict = field(default_factory=dict)
    fuzz_max: Optional[Fraction] = None
    fuzz_grid: int = 4

    def __post_init__(self):
        self.gst = as_time(self.gst)
        self.delta_cap = as_time(self.delta_cap)
        self.base_delay = as_time(self.base_delay)
        self.links = {tuple(k): as_time(v) for k, v in self.links.items()}
        if self.fuzz_max is not None:
            self.fuzz_max = as_time(self.fuzz_max)
        if self.delta_cap <= 0 or self.base_delay <= 0:
            raise ValueError("delta_cap and base_delay must be positive")
        if any(d <= 0 for d in self.links.values()):
            raise ValueError("link delays must be positive")

    @classmethod
    def synchronized(cls, delta=1) -> "DelayPolicy":
        """Every message takes exactly delta; GST at 0"""
        return cls(gst=Fraction(0), delta_cap=as_time(delta), base_delay=as_time(delta))

    def delay(self, sender: int, receiver: int, send_time: Fraction, rng: np.random.Generator) -> Fraction:
        d = self.links.get((sender, receiver), self.base_delay)
        if self.fuzz_max is not None and send_time < self.gst and self.fuzz_max > d:
            step = d / self.fuzz_grid
            steps = int((self.fuzz_max - d) / step)
            d += step * int(rng.integers(0, steps + 1))
        return d

    def bound(self, send_time: Fraction) -> Fraction:
        return max(send_time, self.gst) + self.delta_cap

    def to_dict(self) -> dict:
        return {"gst": fmt_time(self.gst), "delta_cap": fmt_time(self.delta_cap),
                "base_delay": fmt_time(self.base_delay),
                "fuzz_max": fmt_time(self.fuzz_max) if self.fuzz_max is not None else None}


@dataclass(frozen=True)
class SimEnvelope:
    sender: int
    receiver: int
    send_time: Fraction
    deliver_time: Fraction
    size: int
    message: Any


@dataclass(frozen=True)
class OutputRecord:
    time: Fraction
    party: int
    stage: str
    key: tuple
    value: Any
    meta: dict


def summarize(message) -> str:
    name = type(message).__name__
    parts = []
    instance = getattr(message, "instance", None)
    if isinstance(instance, str):
        parts.append(instance)
    for attr in ("round", "view", "slot"):
        value = getattr(message, attr, None)
        if isinstance(value, int):
            parts.append(f"{attr}={value}")
    return f"{name}({' '.join(parts)})"


def _jsonable(value):
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Fraction):
        return fmt_time(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if value is None or isinstance(value, (int, float, str, bool)):
        return value
    if hasattr(value, "grade"):
        return {"value": _jsonable(value.value), "grade": value.grade}
    return repr(value)


class Transcript:
    """Line-delimited JSON event log; the hash covers every line even when lines are not kept"""

    def __init__(self, keep: bool = True):
        self.keep = keep
        self.lines: list = []
        self._hash = hashlib.sha256()

    def record(self, time: Fraction, kind: str, sender: int, receiver: int, summary: str, size: int = 0):
        line = json.dumps({"time": fmt_time(time), "kind": kind, "sender": sender, "receiver": receiver,
                           "summary": summary, "bytes": size}, sort_keys=True, ensure_ascii=False)
        self._hash.update(line.encode("utf-8") + b"\n")
        if self.keep:
            self.lines.append(line)

    @property
    def hexdigest(self) -> str:
        return self._hash.hexdigest()

    def dump(self, path: str):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for line in self.lines:
                f.write(line + "\n")


@dataclass
class Metrics:
    codec: str = "plain"
    outputs: list = field(default_factory=list)
    messages: int = 0
    bytes: int = 0
    messages_by_kind: Counter = field(default_factory=Counter)
    bytes_by_kind: Counter = field(default_factory=Counter)
    suspensions: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)

    def times(self, stage: str, key: tuple = ()) -> dict:
        """First time each party emitted `stage` for `key`"""
        found: dict = {}
        for rec in self.outputs:
            if rec.stage == stage and rec.key == key and rec.party not in found:
                found[rec.party] = rec.time
        return found

    def values(self, stage: str, key: tuple = ()) -> dict:
        found: dict = {}
        for rec in self.outputs:
            if rec.stage == stage and rec.key == key and rec.party not in found:
                found[rec.party] = rec.value
        return found

    def view_kinds(self, parties=None) -> dict:
        """Per-view commit classification ('empty' / 'non-empty') keyed by output key"""
        kinds: dict = {}
        for rec in self.outputs:
            if rec.stage == "view" and (parties is None or rec.party in parties):
                kinds.setdefault(rec.key, rec.meta.get("kind"))
        return kinds

    def to_dict(self, honest=None) -> dict:
        stages: dict = {}
        for rec in self.outputs:
            if honest is not None and rec.party not in honest:
                continue
            label = rec.stage if not rec.key else f"{rec.stage}{list(rec.key)}"
            stages.setdefault(label, {}).setdefault(str(rec.party), fmt_time(rec.time))
        return {
            "codec": self.codec,
            "messages": self.messages,
            "bytes": self.bytes,
            "messages_by_kind": dict(sorted(self.messages_by_kind.items())),
            "bytes_by_kind": dict(sorted(self.bytes_by_kind.items())),
            "output_times": stages,
            "view_kinds": {str(list(k)): v for k, v in sorted(self.view_kinds(honest).items())},
            "suspensions": len(self.suspensions),
            "dropped": {str(p): c for p, c in sorted(self.dropped.items())},
        }


@dataclass
class RunResult:
    engines: dict
    honest: frozenset
    byzantine: frozenset
    inputs: dict
    metrics: Metrics
    transcript: Transcript
    end_time: Fraction
    seed: int
    model_violations: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def transcript_hash(self) -> str:
        return self.transcript.hexdigest

    def honest_engines(self) -> dict:
        return {p: e for p, e in self.engines.items() if p in self.honest}

    def honest_inputs(self) -> dict:
        return {p: v for p, v in self.inputs.items() if p in self.honest}

    def check_model(self):
        if self.model_violations:
            raise InvariantViolation("model-soundness", self.model_violations[0], self.seed)


class Simulator:
    def __init__(self, engines: dict, policy: DelayPolicy, adversary: Optional[Adversary] = None, codec=None,
                 seed: int = 0, registry: Optional[KeyRegistry] = None, keep_transcript: bool = True,
                 max_time=None, max_events: int = 5_000_000, fault_dump: Optional[str] = None):
        self.engines = dict(engines)
        self.policy = policy
        self.adversary = adversary or Adversary()
        self.codec = codec or PlainCodec()
        self.seed = seed
        self.byzantine = frozenset(self.adversary.byzantine)
        self.honest = frozenset(self.engines) - self.byzantine
        if registry is not None:
            self.adversary.bind(registry, len(self.engines), policy)
        self.rng = np.random.default_rng(seed)
        self.now = Fraction(0)
        self.max_time = as_time(max_time) if max_time is not None else None
        self.max_events = max_events
        self.fault_dump = fault_dump
        self.metrics = Metrics(codec=self.codec.name)
        self.transcript = Transcript(keep_transcript)
        self.inputs: dict = {}
        self.violations: list = []
        self._queue: list = []
        self._seq = 0
        self._local: deque = deque()
        self._sizes: dict = {}
        self._suspended: dict = {}

    # Step 1: scheduling

    def _push(self, time: Fraction, sender: int, receiver: int, event):
        self._seq += 1
        heapq.heappush(self._queue, (time, sender, receiver, self._seq, event))

    def schedule_input(self, party: int, value, at=0):
        self.inputs[party] = value
        self._push(as_time(at), party, party, InputEvent(value))

    # Step 2: main loop

    def run(self) -> RunResult:
        logger.info("simulation start: %d parties, %d byzantine, codec=%s, seed=%s",
                    len(self.engines), len(self.byzantine), self.codec.name, self.seed)
        processed = 0
        while self._queue:
            time, sender, receiver, _, event = heapq.heappop(self._queue)
            if self.max_time is not None and time > self.max_time:
                logger.warning("simulation stopped at max_time=%s", fmt_time(self.max_time))
                break
            window_end = self.adversary.suspension_end(receiver, time)
            if window_end is not None and window_end > time:
                self._note_suspension(receiver, time)
                self._push(window_end, sender, receiver, event)
                continue
            self.now = time
            self._dispatch(receiver, event)
            while self._local:
                party, local_event = self._local.popleft()
                self._dispatch(party, local_event)
            processed += 1
            if processed >= self.max_events:
                logger.warning("simulation stopped after %d events", processed)
                break
        for party, engine in self.engines.items():
            self.metrics.dropped[party] = getattr(engine, "total_dropped", engine.dropped)
        logger.info("simulation end: t=%s, %d messages, %d bytes", fmt_time(self.now), self.metrics.messages,
                    self.metrics.bytes)
        return RunResult(self.engines, self.honest, self.byzantine, dict(self.inputs), self.metrics,
                         self.transcript, self.now, self.seed, list(self.violations),
                         {"gst": self.policy.gst, "delta": self.policy.delta_cap})

    def _dispatch(self, party: int, event):
        self._sizes.clear()
        if isinstance(event, Deliver):
            self.transcript.record(self.now, "deliver", event.sender, party, summarize(event.message))
        elif isinstance(event, TimerFired):
            self.transcript.record(self.now, "timer", party, party, repr(event.key))
        else:
            self.transcript.record(self.now, "input", party, party, "input")
        try:
            actions = self.engines[party].step(event)
        except (PrefixConsensusError, AssertionError) as e:
            path = self._dump_on_fault()
            raise EngineFault(party, fmt_time(self.now), f"{type(e).__name__}: {e}", path) from e
        for action in actions:
            self._apply(party, action)

    def _dump_on_fault(self) -> Optional[str]:
        if not self.fault_dump:
            return None
        self.transcript.dump(self.fault_dump)
        return self.fault_dump

    def _apply(self, party: int, action):
        if isinstance(action, Broadcast):
            self._local.append((party, Deliver(party, action.message)))
            for receiver in sorted(self.engines):
                if receiver != party:
                    self._send(party, receiver, action.message)
        elif isinstance(action, Send):
            if action.receiver == party:
                self._local.append((party, Deliver(party, action.message)))
            elif action.receiver in self.engines:
                self._send(party, action.receiver, action.message)
        elif isinstance(action, SetTimer):
            self._push(self.now + action.deltas * self.policy.delta_cap, party, party, TimerFired(action.key))
        elif isinstance(action, Output):
            self.metrics.outputs.append(OutputRecord(self.now, party, action.stage, action.key, action.value,
                                                     action.meta))
            self.transcript.record(self.now, "output", party, party,
                                   json.dumps({"stage": action.stage, "key": _jsonable(action.key),
                                               "value": _jsonable(action.value)}, sort_keys=True))
        else:
            raise EngineFault(party, fmt_time(self.now), f"unknown action {type(action).__name__}")

    # Step 3: the network

    def _size(self, message) -> int:
        cached = self._sizes.get(id(message))
        if cached is not None and cached[0] is message:
            return cached[1]
        size = self.codec.size(message)
        self._sizes[id(message)] = (message, size)
        return size

    def _send(self, sender: int, receiver: int, message):
        outgoing = [message]
        if sender in self.byzantine:
            outgoing = self.adversary.on_send(sender, receiver, message, self.now)
        honest_link = sender in self.honest and receiver in self.honest
        for m in outgoing:
            if m is not message:
                self._check_signer(sender, m)
            delay = self.policy.delay(sender, receiver, self.now, self.rng)
            delay = as_time(self.adversary.on_schedule(sender, receiver, self.now, delay))
            if delay < 0:
                delay = Fraction(0)
            deliver = self.now + delay
            if honest_link and deliver > self.policy.bound(self.now):
                deliver = self.policy.bound(self.now)
            if honest_link and self.now >= self.policy.gst and deliver - self.now > self.policy.delta_cap:
                self.violations.append(f"honest message {sender}->{receiver} exceeds delta after GST")
            size = self._size(m)
            kind = type(m).__name__
            self.metrics.messages += 1
            self.metrics.bytes += size
            self.metrics.messages_by_kind[kind] += 1
            self.metrics.bytes_by_kind[kind] += size
            self.transcript.record(self.now, "send", sender, receiver, summarize(m), size)
            self._push(deliver, sender, receiver, Deliver(sender, m))

    def _check_signer(self, sender: int, message):
        signature = getattr(message, "signature", None)
        if isinstance(signature, Signature) and signature.signer not in self.byzantine:
            self.violations.append(f"party {sender} emitted a message signed by honest party {signature.signer}")

    def _note_suspension(self, party: int, time: Fraction):
        window = self.adversary.suspension_round(time)
        seen = self._suspended.setdefault(window, set())
        if party not in seen:
            seen.add(party)
            self.metrics.suspensions.append((window, party))
            if len(seen) > 1:
                self.violations.append(f"round {window} suspends {sorted(seen)}")


def run(engines: dict, policy: DelayPolicy, inputs: dict, adversary: Optional[Adversary] = None, codec=None,
        seed: int = 0, registry: Optional[KeyRegistry] = None, start_times: Optional[dict] = None,
        **kwargs) -> RunResult:
    """Schedule every party's input (at t=0 unless `start_times` says otherwise) and run to quiescence"""
    sim = Simulator(engines, policy, adversary, codec, seed, registry, **kwargs)
    start_times = start_times or {}
    for party in sorted(inputs):
        sim.schedule_input(party, inputs[party], start_times.get(party, 0))
    return sim.run()


def write_artifacts(result: RunResult, out_dir: str, name: str, extra: Optional[dict] = None) -> dict:
    """metrics.json and transcript.jsonl under out_dir/name; returns the written paths"""
    target = os.path.join(out_dir, name)
    os.makedirs(target, exist_ok=True)
    metrics = result.metrics.to_dict(result.honest)
    metrics["transcript_hash"] = result.transcript_hash
    metrics["end_time"] = fmt_time(result.end_time)
    metrics["seed"] = result.seed
    if extra:
        metrics.update(_jsonable(extra))
    metrics_path = os.path.join(target, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2, ensure_ascii=False)
    transcript_path = os.path.join(target, "transcript.jsonl")
    result.transcript.dump(transcript_path)
    return {"metrics": metrics_path, "transcript": transcript_path}
