"""Leaderless Strong Prefix Consensus.

Views are Verifiable Prefix Consensus instances. View 1 runs on the party's
input; every later view w runs on the ranked vector of digests of the proposal
objects (w, cert) collected for that view. A non-empty view-w low points, via
its first non-HBOT entry, at the high value of an earlier view; following those
pointers back to view 1 yields the agreed high.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, model_validator

from crypto import (HBOT, AggregateSignature, DomainTag, KeyRegistry, MessageKind, Signature, aggregate, digest,
                    verify_aggregate)
from errors import AggregationError, MissingPreimage, PreconditionViolation
from pc_protocols import (PcConfig, PcEngine, QuorumCertificate, Variant, VerifierPool, Vote, predicate_high,
                          predicate_low)
from reactor import Broadcast, Deliver, InputEvent, Output, ProtocolEngine, Send, SetTimer, TimerFired, child_index
from wire_format import Reader, Writer, encode_message, register

logger = logging.getLogger(__name__)


def shift(rank: tuple) -> tuple:
    """Left rotation by one: (p1, p2, ..., pn) -> (p2, ..., pn, p1)"""
    rank = tuple(rank)
    return rank[1:] + rank[:1]


def view_rank(initial: tuple, view: int) -> tuple:
    """Ranking used for view `view`; views 1 and 2 use the initial ranking"""
    rank = tuple(initial)
    for _ in range(max(0, view - 2)):
        rank = shift(rank)
    return rank


@dataclass(frozen=True)
class DirectCert:
    view: int
    value: tuple
    proof: QuorumCertificate

    def parent(self) -> tuple:
        return self.view, self.value


@dataclass(frozen=True)
class IndirectCert:
    view: int
    high_view: int
    value: tuple
    proof: Optional[QuorumCertificate]
    skips: AggregateSignature

    def parent(self) -> tuple:
        return self.high_view, self.value


Certificate = Union[DirectCert, IndirectCert]


@dataclass(frozen=True)
class ProposalObject:
    view: int
    cert: object

    def canonical_bytes(self) -> bytes:
        return encode_message(self)


@dataclass(frozen=True)
class NewView:
    instance: str
    view: int
    cert: object


@dataclass(frozen=True)
class EmptyView:
    instance: str
    view: int
    high_view: int
    high_value: tuple
    high_proof: Optional[QuorumCertificate]
    signature: Signature


@dataclass(frozen=True)
class NewCommit:
    instance: str
    view: int
    value: tuple
    proof: QuorumCertificate


@dataclass(frozen=True)
class FetchRequest:
    instance: str
    digest: bytes


@dataclass(frozen=True)
class FetchResponse:
    instance: str
    obj: object


def skip_statement(view: int, high_view: int) -> tuple:
    return struct.pack("!Q", view), struct.pack("!Q", high_view)


def parse_skip_statement(message: tuple) -> Optional[tuple]:
    if len(message) != 2 or any(not isinstance(m, bytes) or len(m) != 8 for m in message):
        return None
    return struct.unpack("!Q", message[0])[0], struct.unpack("!Q", message[1])[0]


class SpcConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    f: int
    L: int
    instance: str = "spc"
    vpc_variant: Variant = Variant.THREE_ROUND
    rank: Optional[tuple] = None
    prefix_signatures: bool = False

    @model_validator(mode="after")
    def check(self):
        if self.vpc_variant == Variant.FAST_5F1:
            raise ValueError("strong prefix consensus runs three_round or optimistic views")
        if self.n < 3 * self.f + 1:
            raise ValueError(f"strong prefix consensus requires n >= 3f+1 (n={self.n}, f={self.f})")
        if self.rank is not None and sorted(self.rank) != list(range(self.n)):
            raise ValueError("rank must be a permutation of 0..n-1")
        return self

    @property
    def initial_rank(self) -> tuple:
        return tuple(self.rank) if self.rank is not None else tuple(range(self.n))

    def view_instance(self, view: int) -> str:
        return f"{self.instance}/v{view}"

    def vpc_config(self, view: int) -> PcConfig:
        return PcConfig(n=self.n, f=self.f, L=self.L if view == 1 else self.n, variant=self.vpc_variant,
                        instance=self.view_instance(view), prefix_signatures=self.prefix_signatures)

    def skip_tag(self) -> DomainTag:
        return DomainTag(MessageKind.EMPTY_VIEW, self.instance)


@dataclass
class SpcResult:
    low: Optional[tuple] = None
    high: Optional[tuple] = None
    low_view: Optional[int] = None


class SpcEngine(ProtocolEngine):
    """One party's Strong Prefix Consensus reactor; owns the nested per-view engines"""

    def __init__(self, party: int, cfg: SpcConfig, registry: KeyRegistry, pool: Optional[VerifierPool] = None):
        super().__init__(party)
        self.cfg = cfg
        self.registry = registry
        self.pool = pool or VerifierPool(registry)
        self.view = 1
        self.vpcs: dict = {}
        self.proposals: dict = {}
        self.empty_views: dict = {}
        self.best = (0, (), None)
        self.ran: set = set()
        self.empty_sent: set = set()
        self.indirect_sent: set = set()
        self.commit_relayed: set = set()
        self.committed: set = set()
        self.preimages: dict = {}
        self.requested: set = set()
        self.parked: list = []
        self.result = SpcResult()
        self.view_outcomes: dict = {}
        self.indirect_log: list = []

    # Step 1: helpers

    @property
    def halted(self) -> bool:
        """A party stops opening views once its high is fixed; relayed commits carry the rest"""
        return self.result.high is not None

    def vpc(self, view: int) -> PcEngine:
        engine = self.vpcs.get(view)
        if engine is None:
            vcfg = self.cfg.vpc_config(view)
            engine = PcEngine(self.party, vcfg, self.registry, self.pool.get(vcfg))
            self.vpcs[view] = engine
        return engine

    def f_high(self, view: int, value, proof) -> bool:
        if view < 1:
            return False
        vcfg = self.cfg.vpc_config(view)
        return predicate_high(value, proof, vcfg, self.pool.get(vcfg))

    def f_low(self, view: int, value, proof) -> bool:
        if view < 1:
            return False
        vcfg = self.cfg.vpc_config(view)
        return predicate_low(value, proof, vcfg, self.pool.get(vcfg))

    def parent(self, value: tuple) -> tuple:
        """(view, high) named by the first non-HBOT entry; (0, ()) when there is none"""
        for entry in value:
            if entry == HBOT:
                continue
            obj = self.preimages.get(entry)
            if obj is None:
                raise MissingPreimage(entry)
            cert = obj.cert if isinstance(obj, ProposalObject) else None
            if isinstance(cert, (DirectCert, IndirectCert)):
                return cert.parent()
        return 0, ()

    def has_parent(self, view: int, value: tuple) -> bool:
        return view == 1 or self.parent(value) != (0, ())

    def valid_cert(self, view: int, cert) -> bool:
        if isinstance(cert, DirectCert):
            return (cert.view == view - 1 and self.f_high(cert.view, cert.value, cert.proof)
                    and self.has_parent(cert.view, cert.value))
        if isinstance(cert, IndirectCert):
            if cert.view != view - 1 or not self._valid_skips(cert):
                return False
            return self.f_high(cert.high_view, cert.value, cert.proof) and self.has_parent(cert.high_view, cert.value)
        return False

    def _valid_skips(self, cert: IndirectCert) -> bool:
        skips = cert.skips
        if not isinstance(skips, AggregateSignature) or skips.tag != self.cfg.skip_tag():
            return False
        if len(skips.descriptors) != self.cfg.f + 1 or not verify_aggregate(self.registry, skips):
            return False
        reported = []
        for message in skips.messages().values():
            parsed = parse_skip_statement(message)
            if parsed is None or parsed[0] != cert.view:
                return False
            reported.append(parsed[1])
        return cert.high_view == max(reported)

    # Step 2: events

    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            return self._run_vpc_input(1, tuple(event.value))
        if isinstance(event, TimerFired):
            if len(event.key) == 3 and event.key[0] == self.cfg.instance and event.key[1] == "view":
                return self.run_vpc(event.key[2])
            self.dropped += 1
            return []
        if isinstance(event, Deliver):
            return self._deliver(event)
        self.dropped += 1
        return []

    def _deliver(self, event: Deliver) -> list:
        message = event.message
        if isinstance(message, FetchResponse):
            return self._on_fetch_response(message)
        try:
            return self._handle(event.sender, message)
        except MissingPreimage as missing:
            return self._park(event, missing.digest)

    def _handle(self, sender: int, message) -> list:
        if isinstance(message, Vote):
            view = child_index(message.instance, self.cfg.instance, "v")
            if view is None or view < 1:
                self.dropped += 1
                return []
            return self._vpc_actions(view, self.vpc(view).step(Deliver(sender, message)))
        if getattr(message, "instance", None) != self.cfg.instance:
            self.dropped += 1
            return []
        if isinstance(message, NewView):
            return self._on_new_view(sender, message)
        if isinstance(message, EmptyView):
            return self._on_empty_view(sender, message)
        if isinstance(message, NewCommit):
            return self._on_new_commit(message)
        if isinstance(message, FetchRequest):
            return self._on_fetch_request(sender, message)
        self.dropped += 1
        return []

    def _park(self, event, missing: bytes) -> list:
        self.parked.append(event)
        if missing in self.requested:
            return []
        self.requested.add(missing)
        logger.debug("party %s: fetching preimage %s", self.party, missing.hex()[:12])
        return [Broadcast(FetchRequest(self.cfg.instance, missing))]

    def _on_fetch_request(self, sender: int, request: FetchRequest) -> list:
        obj = self.preimages.get(request.digest)
        if obj is None or sender == self.party:
            return []
        return [Send(sender, FetchResponse(self.cfg.instance, obj))]

    def _on_fetch_response(self, response: FetchResponse) -> list:
        if response.instance != self.cfg.instance or not isinstance(response.obj, ProposalObject):
            self.dropped += 1
            return []
        key = digest(response.obj)
        if key not in self.requested or key in self.preimages:
            return []
        self.preimages[key] = response.obj
        return self._replay()

    def _replay(self) -> list:
        parked, self.parked = self.parked, []
        actions = []
        for event in parked:
            if isinstance(event, Deliver):
                actions += self._deliver(event)
            else:
                actions += self._run_task(event)
        return actions

    def _run_task(self, task: tuple) -> list:
        try:
            kind = task[0]
            if kind == "high":
                return self._on_vpc_high(task[1], task[2], task[3])
            if kind == "commit":
                return self.commit(task[1], task[2])
            return self.run_vpc(task[1])
        except MissingPreimage as missing:
            return self._park(task, missing.digest)

    # Step 3: per-view Prefix Consensus

    def run_vpc(self, view: int) -> list:
        if view in self.ran or view < 2 or self.halted:
            return []
        buffer = self.proposals.get(view, {})
        rank = view_rank(self.cfg.initial_rank, view)
        value = tuple(digest(buffer[p]) if p in buffer else HBOT for p in rank)
        return self._run_vpc_input(view, value)

    def _run_vpc_input(self, view: int, value: tuple) -> list:
        if view in self.ran:
            return []
        self.ran.add(view)
        return self._vpc_actions(view, self.vpc(view).step(InputEvent(value)))

    def _vpc_actions(self, view: int, actions: list) -> list:
        out = []
        for action in actions:
            if not isinstance(action, Output):
                out.append(action)
                continue
            if action.stage == "low":
                out += self._on_vpc_low(view, action.value, action.proof)
            elif action.stage == "high":
                out += self._run_task(("high", view, action.value, action.proof))
            elif action.stage == "opt" and view > 1 and self.cfg.vpc_variant == Variant.OPTIMISTIC:
                out += self._run_task(("commit", view, action.value))
        return out

    def _on_vpc_low(self, view: int, value: tuple, proof) -> list:
        message = NewCommit(self.cfg.instance, view, value, proof)
        self.commit_relayed.add((view, value))
        return [Broadcast(message)]

    def _on_vpc_high(self, view: int, value: tuple, proof) -> list:
        # a party with a fixed high opens no further views; other parties finish from its relayed commits
        if self.halted:
            return []
        if self.has_parent(view, value):
            cert = DirectCert(view, value, proof)
            return [Broadcast(NewView(self.cfg.instance, view + 1, cert))]
        if view in self.empty_sent:
            return []
        self.empty_sent.add(view)
        high_view, high_value, high_proof = self.best
        sig = self.registry.sign_vector(self.party, self.cfg.skip_tag(), skip_statement(view, high_view))
        return [Broadcast(EmptyView(self.cfg.instance, view, high_view, high_value, high_proof, sig))]

    # Step 4: view change

    def _on_new_view(self, sender: int, message: NewView) -> list:
        w, cert = message.view, message.cert
        if not isinstance(cert, (DirectCert, IndirectCert)):
            self.dropped += 1
            return []
        obj = ProposalObject(w, cert)
        key = digest(obj)
        if key not in self.preimages:
            self.preimages[key] = obj
        if w < 2 or not self.valid_cert(w, cert):
            self.dropped += 1
            return []
        if self.halted:
            return []
        self._raise_best(cert)
        if w < self.view:
            logger.debug("party %s: late certificate for view %s while in view %s", self.party, w, self.view)
            return []
        actions = []
        if w > self.view:
            if sender != self.party:
                actions.append(Broadcast(message))
            self.view = w
            actions.append(SetTimer((self.cfg.instance, "view", w), 2))
        buffer = self.proposals.setdefault(w, {})
        if sender not in buffer:
            buffer[sender] = obj
        if len(buffer) == self.cfg.n:
            actions += self.run_vpc(w)
        return actions

    def _raise_best(self, cert):
        if isinstance(cert, DirectCert):
            triple = (cert.view, cert.value, cert.proof)
        else:
            triple = (cert.high_view, cert.value, cert.proof)
        if triple[0] > self.best[0]:
            self.best = triple

    def _on_empty_view(self, sender: int, message: EmptyView) -> list:
        w = message.view
        if self.halted or w < self.view or w <= message.high_view or message.signature.signer != sender:
            return []
        statement = skip_statement(w, message.high_view)
        if not self.registry.verify_vector(sender, self.cfg.skip_tag(), statement, message.signature):
            self.dropped += 1
            return []
        if not self.f_high(message.high_view, message.high_value, message.high_proof):
            self.dropped += 1
            return []
        if not self.has_parent(message.high_view, message.high_value):
            self.dropped += 1
            return []
        collected = self.empty_views.setdefault(w, {})
        if sender in collected:
            return []
        collected[sender] = message
        if len(collected) != self.cfg.f + 1 or w in self.indirect_sent:
            return []
        self.indirect_sent.add(w)
        entries = [(j, skip_statement(w, m.high_view), m.signature) for j, m in collected.items()]
        try:
            skips = aggregate(self.registry, self.cfg.skip_tag(), entries)
        except AggregationError as e:
            raise PreconditionViolation(f"party {self.party}: skip statements failed to aggregate: {e}") from e
        top = max(collected.values(), key=lambda m: (m.high_view, -m.signature.signer))
        cert = IndirectCert(w, top.high_view, top.high_value, top.high_proof, skips)
        self.indirect_log.append((w + 1, top.high_view))
        return [Broadcast(NewView(self.cfg.instance, w + 1, cert))]

    # Step 5: commit

    def _on_new_commit(self, message: NewCommit) -> list:
        w, value = message.view, message.value
        if not self.f_low(w, value, message.proof):
            self.dropped += 1
            return []
        actions = []
        if (w, value) not in self.commit_relayed:
            self.commit_relayed.add((w, value))
            actions.append(Broadcast(message))
        return actions + self._run_task(("commit", w, value))

    def commit(self, view: int, value: tuple) -> list:
        if (view, value) in self.committed:
            return []
        if view == 1:
            self.committed.add((view, value))
            actions = []
            if self.result.low is None:
                self.result.low = value
                actions.append(Output("low", value))
            self.view_outcomes.setdefault(1, "non-empty")
            return actions
        parent_view, parent_value = self.parent(value)
        self.committed.add((view, value))
        if parent_view == 0:
            self.view_outcomes.setdefault(view, "empty")
            return [Output("view", value, key=(view,), meta={"kind": "empty"})]
        self.view_outcomes[view] = "non-empty"
        actions = [Output("view", value, key=(view,), meta={"kind": "non-empty"})]
        if parent_view == 1:
            if self.result.high is None:
                self.result.high = parent_value
                self.result.low_view = view
                actions.append(Output("high", parent_value))
            return actions
        return actions + self.commit(parent_view, parent_value)


# Step 6: byte layout of the Strong PC messages

TAG_DIRECT = 0x20
TAG_INDIRECT = 0x21
TAG_PROPOSAL_OBJECT = 0x22
TAG_NEW_VIEW = 0x23
TAG_EMPTY_VIEW = 0x24
TAG_NEW_COMMIT = 0x25
TAG_FETCH_REQUEST = 0x26
TAG_FETCH_RESPONSE = 0x27


def _write_optional(w: Writer, obj):
    w.u8(0 if obj is None else 1)
    if obj is not None:
        w.obj(obj)


def _read_optional(r: Reader, field: str):
    return r.obj(field) if r.u8(field + ".present") else None


def _write_direct(w: Writer, c: DirectCert):
    w.u32(c.view)
    w.vector(c.value)
    w.obj(c.proof)


def _read_direct(r: Reader, field: str) -> DirectCert:
    return DirectCert(r.u32(field + ".view"), r.vector(field + ".value"), r.obj(field + ".proof"))


def _write_indirect(w: Writer, c: IndirectCert):
    w.u32(c.view)
    w.u32(c.high_view)
    w.vector(c.value)
    _write_optional(w, c.proof)
    w.aggregate(c.skips)


def _read_indirect(r: Reader, field: str) -> IndirectCert:
    return IndirectCert(r.u32(field + ".view"), r.u32(field + ".high_view"), r.vector(field + ".value"),
                        _read_optional(r, field + ".proof"), r.aggregate(field + ".skips"))


def _write_proposal_object(w: Writer, p: ProposalObject):
    w.u32(p.view)
    w.obj(p.cert)


def _read_proposal_object(r: Reader, field: str) -> ProposalObject:
    return ProposalObject(r.u32(field + ".view"), r.obj(field + ".cert"))


def _write_new_view(w: Writer, m: NewView):
    w.str(m.instance)
    w.u32(m.view)
    w.obj(m.cert)


def _read_new_view(r: Reader, field: str) -> NewView:
    return NewView(r.str(field + ".instance"), r.u32(field + ".view"), r.obj(field + ".cert"))


def _write_empty_view(w: Writer, m: EmptyView):
    w.str(m.instance)
    w.u32(m.view)
    w.u32(m.high_view)
    w.vector(m.high_value)
    _write_optional(w, m.high_proof)
    w.signature(m.signature)


def _read_empty_view(r: Reader, field: str) -> EmptyView:
    return EmptyView(r.str(field + ".instance"), r.u32(field + ".view"), r.u32(field + ".high_view"),
                     r.vector(field + ".high_value"), _read_optional(r, field + ".high_proof"),
                     r.signature(field + ".signature"))


def _write_new_commit(w: Writer, m: NewCommit):
    w.str(m.instance)
    w.u32(m.view)
    w.vector(m.value)
    w.obj(m.proof)


def _read_new_commit(r: Reader, field: str) -> NewCommit:
    return NewCommit(r.str(field + ".instance"), r.u32(field + ".view"), r.vector(field + ".value"),
                     r.obj(field + ".proof"))


def _write_fetch_request(w: Writer, m: FetchRequest):
    w.str(m.instance)
    w.value(m.digest)


def _read_fetch_request(r: Reader, field: str) -> FetchRequest:
    return FetchRequest(r.str(field + ".instance"), r.value(field + ".digest"))


def _write_fetch_response(w: Writer, m: FetchResponse):
    w.str(m.instance)
    w.obj(m.obj)


def _read_fetch_response(r: Reader, field: str) -> FetchResponse:
    return FetchResponse(r.str(field + ".instance"), r.obj(field + ".obj"))


register(TAG_DIRECT, "direct_cert", DirectCert, _write_direct, _read_direct)
register(TAG_INDIRECT, "indirect_cert", IndirectCert, _write_indirect, _read_indirect)
register(TAG_PROPOSAL_OBJECT, "proposal_object", ProposalObject, _write_proposal_object, _read_proposal_object)
register(TAG_NEW_VIEW, "new_view", NewView, _write_new_view, _read_new_view)
register(TAG_EMPTY_VIEW, "empty_view", EmptyView, _write_empty_view, _read_empty_view)
register(TAG_NEW_COMMIT, "new_commit", NewCommit, _write_new_commit, _read_new_commit)
register(TAG_FETCH_REQUEST, "fetch_request", FetchRequest, _write_fetch_request, _read_fetch_request)
register(TAG_FETCH_RESPONSE, "fetch_response", FetchResponse, _write_fetch_response, _read_fetch_response)
