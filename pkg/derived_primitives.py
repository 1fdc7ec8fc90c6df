"""Primitives reduced to Prefix Consensus: graded, binary and validated consensus."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from crypto import KeyRegistry
from errors import PreconditionViolation
from msc_engine import MscConfig, MscEngine
from pc_protocols import PcConfig, PcEngine, Variant, VerifierPool
from reactor import InputEvent, Output, ProtocolEngine
from spc_engine import SpcConfig, SpcEngine

logger = logging.getLogger(__name__)

BIT_ZERO = b"\x00"
BIT_ONE = b"\x01"


@dataclass(frozen=True)
class GradedOutput:
    value: Optional[bytes]
    grade: int

    def __post_init__(self):
        if self.grade not in (0, 1, 2) or (self.value is None) != (self.grade == 0):
            raise PreconditionViolation(f"invalid graded output ({self.value!r}, {self.grade})")


def graded_from_pc(low: Sequence, high: Sequence) -> GradedOutput:
    low, high = tuple(low), tuple(high)
    if len(low) > 1 or len(high) > 1:
        raise PreconditionViolation("graded consensus maps length-1 prefix consensus outputs only")
    if not high:
        if low:
            raise PreconditionViolation("low is not a prefix of high")
        return GradedOutput(None, 0)
    if not low:
        return GradedOutput(high[0], 1)
    if low != high:
        raise PreconditionViolation("low is not a prefix of high")
    return GradedOutput(high[0], 2)


def pc_from_graded(grades: Sequence[GradedOutput]) -> tuple:
    """(low, high): longest prefix graded 2, longest prefix graded at least 1"""
    low, high = [], []
    for g in grades:
        if g.grade < 1:
            break
        high.append(g.value)
        if g.grade == 2 and len(low) == len(high) - 1:
            low.append(g.value)
    return tuple(low), tuple(high)


class GradedEngine(ProtocolEngine):
    """Graded consensus on one value via a 3-round Prefix Consensus of capacity 1"""

    def __init__(self, party: int, n: int, f: int, registry: KeyRegistry, instance: str = "graded",
                 pool: Optional[VerifierPool] = None):
        super().__init__(party)
        self.cfg = PcConfig(n=n, f=f, L=1, variant=Variant.THREE_ROUND, instance=instance)
        pool = pool or VerifierPool(registry)
        self.pc = PcEngine(party, self.cfg, registry, pool.get(self.cfg))
        self.output: Optional[GradedOutput] = None

    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            event = InputEvent((event.value,))
        actions = []
        for action in self.pc.step(event):
            if not isinstance(action, Output):
                actions.append(action)
        self.dropped = self.pc.dropped
        if self.output is None and self.pc.result.complete:
            self.output = graded_from_pc(self.pc.result.low, self.pc.result.high)
            actions.append(Output("grade", self.output, meta={"grade": self.output.grade}))
        return actions


class GradedVectorEngine(ProtocolEngine):
    """L parallel graded instances, one per index, recombined into a (low, high) pair"""

    def __init__(self, party: int, n: int, f: int, L: int, registry: KeyRegistry, instance: str = "graded",
                 pool: Optional[VerifierPool] = None):
        super().__init__(party)
        self.L = L
        pool = pool or VerifierPool(registry)
        self.instances = [GradedEngine(party, n, f, registry, f"{instance}/i{k}", pool) for k in range(L)]
        self._by_instance = {g.cfg.instance: g for g in self.instances}
        self.result: Optional[tuple] = None

    def step(self, event) -> list:
        actions = []
        if isinstance(event, InputEvent):
            value = tuple(event.value)
            if len(value) != self.L:
                raise PreconditionViolation(f"parallel graded consensus needs a full length-{self.L} input")
            for engine, v in zip(self.instances, value):
                actions += engine.step(InputEvent(v))
        else:
            engine = self._by_instance.get(getattr(getattr(event, "message", None), "instance", None))
            if engine is None:
                self.dropped += 1
                return []
            actions += engine.step(event)
        actions = [a for a in actions if not isinstance(a, Output)]
        if self.result is None and all(g.output is not None for g in self.instances):
            low, high = pc_from_graded([g.output for g in self.instances])
            self.result = (low, high)
            actions += [Output("low", low), Output("high", high)]
        return actions


class BinaryEngine(ProtocolEngine):
    """Binary consensus: Strong PC on a length-1 vector, deciding the high's entry.

    An empty high is only possible when honest inputs were mixed, in which
    case every honest party decides 0.
    """

    def __init__(self, party: int, n: int, f: int, registry: KeyRegistry, instance: str = "binary",
                 pool: Optional[VerifierPool] = None):
        super().__init__(party)
        self.spc = SpcEngine(party, SpcConfig(n=n, f=f, L=1, instance=instance), registry, pool)
        self.decision: Optional[int] = None

    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            if event.value not in (0, 1):
                raise PreconditionViolation(f"binary input must be 0 or 1, got {event.value!r}")
            event = InputEvent((BIT_ONE if event.value else BIT_ZERO,))
        actions = []
        for action in self.spc.step(event):
            if not isinstance(action, Output):
                actions.append(action)
            elif action.stage == "high" and self.decision is None:
                self.decision = 1 if action.value == (BIT_ONE,) else 0
                actions.append(Output("decide", self.decision))
        self.dropped = self.spc.dropped
        return actions


class ValidatedEngine(ProtocolEngine):
    """Validated consensus: disseminate inputs, agree on their ranked digests, decide the first valid one.

    Runs a single Multi-slot Consensus slot. When the agreed high holds no
    valid entry the engine reports an undecided outcome instead of guessing.
    """

    def __init__(self, party: int, n: int, f: int, registry: KeyRegistry, predicate: Callable[[bytes], bool],
                 instance: str = "validated", pool: Optional[VerifierPool] = None):
        super().__init__(party)
        self.predicate = predicate
        self.input: Optional[bytes] = None
        self.msc = MscEngine(party, MscConfig(n=n, f=f, instance=instance, slots=1), registry, pool,
                             payloads=lambda _party, _slot: self.input,
                             validity=lambda proposal: self._valid(proposal.payload))
        self.decided = False
        self.decision: Optional[bytes] = None

    def _valid(self, payload) -> bool:
        try:
            return bool(self.predicate(payload))
        except Exception:
            logger.debug("party %s: validity predicate raised on %r", self.party, payload, exc_info=True)
            return False

    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            if not isinstance(event.value, bytes):
                raise PreconditionViolation("validated consensus input must be bytes")
            self.input = event.value
        actions = []
        for action in self.msc.step(event):
            if not isinstance(action, Output):
                actions.append(action)
            elif action.stage == "commit" and action.meta.get("source") == "high" and not self.decided:
                actions += self._decide()
        self.dropped = self.msc.total_dropped
        return actions

    def _decide(self) -> list:
        self.decided = True
        for record in self.msc.log:
            if self._valid(record.payload):
                self.decision = record.payload
                return [Output("decide", record.payload, meta={"origin": record.origin})]
        logger.info("party %s: agreed high carries no valid entry, undecided", self.party)
        return [Output("decide", None, meta={"undecided": True})]

