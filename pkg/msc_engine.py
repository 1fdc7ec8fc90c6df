"""Multi-slot Consensus: one Strong Prefix Consensus instance per slot.

Every slot each party broadcasts a payload proposal, waits for all n proposals
or a 2Δ timer, and runs Strong PC on the vector of proposal digests ordered by
the slot ranking. The Strong PC low is committed early, the high completes the
slot, demotes the first excluded party and starts the next slot.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from pydantic import BaseModel, ConfigDict, model_validator

from crypto import HBOT, KeyRegistry, digest
from errors import MissingPreimage
from pc_protocols import Variant, VerifierPool
from reactor import Broadcast, Deliver, InputEvent, Output, ProtocolEngine, Send, SetTimer, TimerFired, child_index
from spc_engine import FetchRequest, FetchResponse, SpcConfig, SpcEngine
from wire_format import Reader, Writer, encode_message, register

logger = logging.getLogger(__name__)


def update_rank(rank: tuple, v_high: tuple) -> tuple:
    """Move the first party excluded by `v_high` to the end of the ranking"""
    rank = tuple(rank)
    cut = len(v_high)
    if cut > len(rank):
        raise ValueError(f"high of length {cut} is longer than the ranking ({len(rank)})")
    if cut == len(rank):
        return rank
    return rank[:cut] + rank[cut + 1:] + (rank[cut],)


@dataclass(frozen=True)
class Proposal:
    instance: str
    slot: int
    payload: bytes

    def canonical_bytes(self) -> bytes:
        return encode_message(self)


def default_payload(party: int, slot: int) -> bytes:
    return f"p{party}-s{slot}".encode("utf-8")


def accept_all(proposal: Proposal) -> bool:
    return True


class MscConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    f: int
    instance: str = "msc"
    slots: int = 1
    optimistic: bool = False
    rank: Optional[tuple] = None
    prefix_signatures: bool = False

    @model_validator(mode="after")
    def check(self):
        if self.n < 3 * self.f + 1:
            raise ValueError(f"multi-slot consensus requires n >= 3f+1 (n={self.n}, f={self.f})")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.rank is not None and sorted(self.rank) != list(range(self.n)):
            raise ValueError("rank must be a permutation of 0..n-1")
        return self

    @property
    def initial_rank(self) -> tuple:
        return tuple(self.rank) if self.rank is not None else tuple(range(self.n))

    def slot_instance(self, slot: int) -> str:
        return f"{self.instance}/s{slot}"

    def spc_config(self, slot: int) -> SpcConfig:
        variant = Variant.OPTIMISTIC if self.optimistic else Variant.THREE_ROUND
        return SpcConfig(n=self.n, f=self.f, L=self.n, instance=self.slot_instance(slot), vpc_variant=variant,
                         prefix_signatures=self.prefix_signatures)


@dataclass
class CommitRecord:
    slot: int
    index: int
    origin: int
    digest: bytes
    payload: bytes

    def to_dict(self) -> dict:
        return {"slot": self.slot, "index": self.index, "origin": self.origin, "digest": self.digest.hex()}


@dataclass
class SlotState:
    slot: int
    rank: tuple
    buffer: dict = field(default_factory=dict)
    input: Optional[tuple] = None
    low: Optional[tuple] = None
    high: Optional[tuple] = None
    committed_upto: int = 0


class MscEngine(ProtocolEngine):
    """One party's Multi-slot Consensus reactor; slots run strictly one after another"""

    def __init__(self, party: int, cfg: MscConfig, registry: KeyRegistry, pool: Optional[VerifierPool] = None,
                 payloads: Callable[[int, int], bytes] = default_payload,
                 validity: Callable[[Proposal], bool] = accept_all):
        super().__init__(party)
        self.cfg = cfg
        self.registry = registry
        self.pool = pool or VerifierPool(registry)
        self.payloads = payloads
        self.validity = validity
        self.slot = 0
        self.slots: dict = {}
        self.spcs: dict = {}
        self.objects: dict = {}
        self.committed: set = set()
        self.log: list = []
        self.ranks: dict = {1: cfg.initial_rank}
        self.demotions: list = []
        self.pending: list = []
        self.requested: set = set()
        self.deferred: dict = {}

    def state(self, slot: int) -> SlotState:
        st = self.slots.get(slot)
        if st is None:
            st = SlotState(slot, self.ranks.get(slot, ()))
            self.slots[slot] = st
        return st

    def spc(self, slot: int) -> SpcEngine:
        engine = self.spcs.get(slot)
        if engine is None:
            engine = SpcEngine(self.party, self.cfg.spc_config(slot), self.registry, self.pool)
            self.spcs[slot] = engine
        return engine

    @property
    def total_dropped(self) -> int:
        return self.dropped + sum(e.dropped for e in self.spcs.values())

    # Step 1: events

    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            return self.new_slot(1) if self.slot == 0 else []
        if isinstance(event, TimerFired):
            return self._on_timer(event.key)
        if isinstance(event, Deliver):
            return self._on_deliver(event)
        self.dropped += 1
        return []

    def _on_timer(self, key: tuple) -> list:
        if len(key) == 3 and key[0] == self.cfg.instance and key[1] == "slot":
            return self.run_spc(key[2])
        slot = child_index(key[0], self.cfg.instance, "s") if key else None
        if slot is None or slot not in self.spcs:
            self.dropped += 1
            return []
        return self._spc_actions(slot, self.spcs[slot].step(TimerFired(key)))

    def _on_deliver(self, event: Deliver) -> list:
        message = event.message
        instance = getattr(message, "instance", None)
        if not isinstance(instance, str):
            self.dropped += 1
            return []
        if instance == self.cfg.instance:
            if isinstance(message, Proposal):
                return self._on_proposal(event.sender, message)
            if isinstance(message, FetchRequest):
                return self._on_fetch_request(event.sender, message)
            if isinstance(message, FetchResponse):
                return self._on_fetch_response(message)
            self.dropped += 1
            return []
        slot = child_index(instance, self.cfg.instance, "s")
        if slot is None or not 1 <= slot <= self.cfg.slots:
            self.dropped += 1
            return []
        return self._spc_actions(slot, self.spc(slot).step(event))

    # Step 2: proposals

    def new_slot(self, slot: int) -> list:
        if slot > self.cfg.slots or slot <= self.slot:
            return []
        self.slot = slot
        st = self.state(slot)
        st.rank = self.ranks[slot]
        proposal = Proposal(self.cfg.instance, slot, self.payloads(self.party, slot))
        actions = [Output("slot", slot, key=(slot,)), Broadcast(proposal),
                   SetTimer((self.cfg.instance, "slot", slot), 2)]
        # outputs of this slot that arrived while an earlier slot was still open
        return actions + self._spc_actions(slot, self.deferred.pop(slot, []))

    def _on_proposal(self, sender: int, proposal: Proposal) -> list:
        s = proposal.slot
        if s < 1 or s > self.cfg.slots or not isinstance(proposal.payload, bytes):
            self.dropped += 1
            return []
        key = digest(proposal)
        st = self.state(s)
        if s < self.slot or st.input is not None:
            self.objects.setdefault(key, proposal)
            logger.debug("party %s: late proposal for slot %s from %s", self.party, s, sender)
            return []
        if sender in st.buffer:
            return []
        if not self.validity(proposal):
            self.dropped += 1
            logger.debug("party %s: proposal from %s fails validity", self.party, sender)
            return []
        st.buffer[sender] = proposal
        self.objects.setdefault(key, proposal)
        if s == self.slot and len(st.buffer) == self.cfg.n:
            return self.run_spc(s)
        return []

    def run_spc(self, slot: int) -> list:
        st = self.slots.get(slot)
        if slot != self.slot or st is None or st.input is not None:
            return []
        st.input = tuple(digest(st.buffer[p]) if p in st.buffer else HBOT for p in st.rank)
        return self._spc_actions(slot, self.spc(slot).step(InputEvent(st.input)))

    # Step 3: Strong PC outputs

    def _spc_actions(self, slot: int, actions: list) -> list:
        out = []
        for action in actions:
            if not isinstance(action, Output):
                out.append(action)
            elif slot > self.slot:
                self.deferred.setdefault(slot, []).append(action)
            elif action.stage == "low":
                self.state(slot).low = action.value
                out += self._enqueue(slot, action.value, "low")
            elif action.stage == "high":
                out += self._on_spc_high(slot, action.value)
            elif action.stage == "view":
                out.append(Output("view", action.value, key=(slot,) + action.key, meta=action.meta))
        return out

    def _on_spc_high(self, slot: int, high: tuple) -> list:
        st = self.state(slot)
        st.high = high
        rank = self.ranks.get(slot, st.rank)
        self.ranks[slot + 1] = update_rank(rank, high)
        if self.ranks[slot + 1] != rank:
            self.demotions.append((slot, rank[len(high)]))
            logger.debug("party %s: slot %s demotes party %s", self.party, slot, rank[len(high)])
        actions = [Output("decide", high, key=(slot,))]
        actions += self._enqueue(slot, high, "high")
        return actions + self.new_slot(slot + 1)

    # Step 4: commit, in slot order, fetching missing payloads

    def _enqueue(self, slot: int, value: tuple, source: str) -> list:
        self.pending.append((slot, value, source))
        return self._drain()

    def _drain(self) -> list:
        actions = []
        while self.pending:
            slot, value, source = self.pending[0]
            try:
                actions += self.commit(slot, value, source)
            except MissingPreimage as missing:
                if missing.digest not in self.requested:
                    self.requested.add(missing.digest)
                    actions.append(Broadcast(FetchRequest(self.cfg.instance, missing.digest)))
                return actions
            self.pending.pop(0)
        return actions

    def commit(self, slot: int, value: tuple, source: str) -> list:
        st = self.state(slot)
        start = st.committed_upto
        if len(value) <= start and source == "low":
            return []
        missing = [d for d in value[start:] if d != HBOT and d not in self.objects]
        if missing:
            raise MissingPreimage(missing[0])
        rank = self.ranks.get(slot, st.rank)
        fresh = []
        for index in range(start, len(value)):
            entry = value[index]
            if entry == HBOT or entry in self.committed:
                continue
            self.committed.add(entry)
            record = CommitRecord(slot, index, rank[index], entry, self.objects[entry].payload)
            self.log.append(record)
            fresh.append(record.payload)
        st.committed_upto = max(start, len(value))
        return [Output("commit", tuple(fresh), key=(slot,), meta={"source": source})]

    def _on_fetch_request(self, sender: int, request: FetchRequest) -> list:
        obj = self.objects.get(request.digest)
        if obj is None or sender == self.party:
            return []
        return [Send(sender, FetchResponse(self.cfg.instance, obj))]

    def _on_fetch_response(self, response: FetchResponse) -> list:
        obj = response.obj
        if not isinstance(obj, Proposal) or obj.instance != self.cfg.instance:
            self.dropped += 1
            return []
        key = digest(obj)
        if key not in self.requested or key in self.objects:
            return []
        self.objects[key] = obj
        return self._drain()

    # Step 5: exports

    def commit_log(self) -> list:
        return [r.to_dict() for r in self.log]

    def rank_trace(self) -> dict:
        return {s: list(r) for s, r in sorted(self.ranks.items())}

    def decided(self) -> dict:
        return {s: st.high for s, st in sorted(self.slots.items()) if st.high is not None}


@dataclass(frozen=True)
class SlotRecord:
    """Ground truth for one slot: when it started and which digests honest parties proposed / the slot decided"""
    start: object
    honest_inputs: frozenset
    decided: frozenset


def censorship_audit(slots: Mapping[int, SlotRecord], gst) -> list:
    """Slots starting at or after GST whose decided vector misses an honest proposal"""
    return [s for s, record in sorted(slots.items())
            if record.start >= gst and not record.honest_inputs <= record.decided]


TAG_PROPOSAL = 0x30


def _write_proposal(w: Writer, p: Proposal):
    w.str(p.instance)
    w.u32(p.slot)
    w.blob(p.payload)


def _read_proposal(r: Reader, field: str) -> Proposal:
    return Proposal(r.str(field + ".instance"), r.u32(field + ".slot"), r.blob(field + ".payload"))


register(TAG_PROPOSAL, "proposal", Proposal, _write_proposal, _read_proposal)
