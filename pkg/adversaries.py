"""Byzantine and network adversaries for the simulator.

Byzantine parties run the honest engines; an adversary rewrites, drops or
duplicates what they send (`on_send`), picks delays (`on_schedule`) and may
suspend one party per round (`suspension_end`). Adversaries only ever hold
signing capabilities of Byzantine parties.
"""
from __future__ import annotations

import logging
import math
from fractions import Fraction
from typing import Iterable, Optional

from crypto import HBOT, DomainTag, KeyRegistry, MessageKind, digest
from msc_engine import Proposal
from pc_protocols import Vote, sign_prefixes
from spc_engine import DirectCert, FetchResponse, NewCommit, NewView, ProposalObject

logger = logging.getLogger(__name__)


class Adversary:
    """Strategy that changes nothing; subclasses override the hooks they need"""
    name = "none"

    def __init__(self, byzantine: Iterable[int] = ()):
        self.byzantine = frozenset(byzantine)
        self.signers: dict = {}
        self.n = 0
        self.policy = None

    def bind(self, registry: KeyRegistry, n: int, policy):
        self.signers = {p: registry.signer(p) for p in self.byzantine}
        self.n = n
        self.policy = policy

    def on_send(self, sender: int, receiver: int, message, now) -> list:
        return [message]

    def on_schedule(self, sender: int, receiver: int, now, delay):
        return delay

    def suspension_end(self, party: int, time) -> Optional[Fraction]:
        return None

    def suspension_round(self, time) -> int:
        return 0

    def resign(self, vote: Vote, value: tuple) -> Vote:
        """Same vote with another value, signed by its (Byzantine) sender"""
        signer = self.signers[vote.sender]
        tag = DomainTag(MessageKind(vote.round), vote.instance)
        prefix_sigs = ()
        if vote.prefix_signatures:
            signature, prefix_sigs = sign_prefixes(signer.sign_vector, tag, tuple(value))
        else:
            signature = signer.sign_vector(tag, value)
        return Vote(vote.round, vote.instance, vote.sender, tuple(value), signature, vote.qcs, prefix_sigs)


class Silent(Adversary):
    name = "silent"

    def on_send(self, sender, receiver, message, now) -> list:
        return []


class Equivocate(Adversary):
    """Round-1 votes and proposals go out in two conflicting versions, split across receivers"""
    name = "equivocate"

    def __init__(self, byzantine: Iterable[int] = (), split: str = "half"):
        super().__init__(byzantine)
        if split not in ("half", "parity"):
            raise ValueError(f"unknown split rule {split!r}")
        self.split = split

    def second_side(self, receiver: int) -> bool:
        if self.split == "parity":
            return receiver % 2 == 1
        return receiver >= self.n // 2

    def on_send(self, sender, receiver, message, now) -> list:
        if not self.second_side(receiver):
            return [message]
        if isinstance(message, Vote) and message.round == 1:
            value = message.value
            twisted = (b"\xee" + value[0],) + value[1:] if value else (b"\xee",)
            return [self.resign(message, twisted)]
        if isinstance(message, Proposal):
            return [Proposal(message.instance, message.slot, b"equivocal:" + message.payload)]
        return [message]


class Censor(Adversary):
    """Reveal proposal bodies only to `reveal_to` and hide their digests from everyone else's round-1 votes.

    `targets` picks which bodies are hidden (multi-slot proposals, Strong PC
    new-view objects); `views` optionally restricts new-view hiding.
    """
    name = "censor"

    def __init__(self, byzantine: Iterable[int] = (), reveal_to: Iterable[int] = (),
                 targets: Iterable[str] = ("proposal",), views: Optional[Iterable[int]] = None):
        super().__init__(byzantine)
        self.reveal_to = frozenset(reveal_to)
        self.targets = frozenset(targets)
        self.views = frozenset(views) if views is not None else None
        self.hidden: set = set()

    def _hides(self, message) -> Optional[bytes]:
        if isinstance(message, Proposal) and "proposal" in self.targets:
            return digest(message)
        if isinstance(message, NewView) and "new_view" in self.targets:
            if self.views is None or message.view in self.views:
                return digest(ProposalObject(message.view, message.cert))
        return None

    def on_send(self, sender, receiver, message, now) -> list:
        hidden = self._hides(message)
        if hidden is not None:
            self.hidden.add(hidden)
        informed = receiver in self.reveal_to or receiver in self.byzantine
        if informed:
            return [message]
        if hidden is not None:
            return []
        if isinstance(message, Vote) and message.round == 1 and any(e in self.hidden for e in message.value):
            return [self.resign(message, tuple(HBOT if e in self.hidden else e for e in message.value))]
        return [message]


class Delayer(Adversary):
    """Stretch chosen links by `extra` before GST"""
    name = "delayer"

    def __init__(self, byzantine: Iterable[int] = (), links: Optional[Iterable] = None, extra=5):
        super().__init__(byzantine)
        self.links = frozenset(tuple(link) for link in links) if links is not None else None
        self.extra = Fraction(str(extra)) if isinstance(extra, float) else Fraction(extra)

    def on_schedule(self, sender, receiver, now, delay):
        if self.policy is None or now >= self.policy.gst:
            return delay
        if self.links is None or (sender, receiver) in self.links:
            return delay + self.extra
        return delay


class Suspender(Adversary):
    """Round-robin suspension: during round r party order[r mod n] neither sends nor receives"""
    name = "suspender"

    def __init__(self, byzantine: Iterable[int] = (), round_length=None, start=0, order: Optional[list] = None):
        super().__init__(byzantine)
        self.round_length = round_length
        self.start = Fraction(start)
        self.order = list(order) if order is not None else None

    def _length(self) -> Fraction:
        if self.round_length is not None:
            return Fraction(self.round_length)
        return self.policy.base_delay if self.policy is not None else Fraction(1)

    def suspension_round(self, time) -> int:
        return math.floor(Fraction(time) / self._length())

    def suspension_end(self, party, time) -> Optional[Fraction]:
        if time < self.start or not self.n:
            return None
        order = self.order or list(range(self.n))
        r = self.suspension_round(time)
        if order[r % len(order)] != party:
            return None
        return (r + 1) * self._length()


class WithholdBody(Adversary):
    """Send digests normally but deliver proposal bodies only to `reveal_to`"""
    name = "withhold_body"

    def __init__(self, byzantine: Iterable[int] = (), reveal_to: Iterable[int] = ()):
        super().__init__(byzantine)
        self.reveal_to = frozenset(reveal_to)

    def on_send(self, sender, receiver, message, now) -> list:
        if isinstance(message, (Proposal, NewView, FetchResponse)) and receiver not in self.reveal_to:
            return []
        return [message]


def _doctor(value: tuple) -> tuple:
    return value[:-1] if value else (b"\xde\xad",)


class DoctoredProof(Adversary):
    """Attach valid-looking proofs to values they do not certify"""
    name = "doctored_proof"

    def on_send(self, sender, receiver, message, now) -> list:
        if isinstance(message, Vote) and message.round >= 2:
            return [self.resign(message, _doctor(message.value))]
        if isinstance(message, NewCommit):
            return [NewCommit(message.instance, message.view, _doctor(message.value), message.proof)]
        if isinstance(message, NewView) and isinstance(message.cert, DirectCert):
            cert = message.cert
            return [NewView(message.instance, message.view, DirectCert(cert.view, _doctor(cert.value), cert.proof))]
        return [message]


class Composite(Adversary):
    """Several strategies at once; each rewrites only its own parties' messages"""
    name = "composite"

    def __init__(self, parts: Iterable[Adversary]):
        self.parts = list(parts)
        super().__init__(frozenset().union(*(p.byzantine for p in self.parts)))

    def bind(self, registry, n, policy):
        super().bind(registry, n, policy)
        for part in self.parts:
            part.bind(registry, n, policy)

    def on_send(self, sender, receiver, message, now) -> list:
        outgoing = [message]
        for part in self.parts:
            if sender in part.byzantine:
                outgoing = [m2 for m in outgoing for m2 in part.on_send(sender, receiver, m, now)]
        return outgoing

    def on_schedule(self, sender, receiver, now, delay):
        for part in self.parts:
            delay = part.on_schedule(sender, receiver, now, delay)
        return delay

    def suspension_end(self, party, time):
        for part in self.parts:
            end = part.suspension_end(party, time)
            if end is not None:
                return end
        return None

    def suspension_round(self, time) -> int:
        for part in self.parts:
            if isinstance(part, Suspender):
                return part.suspension_round(time)
        return 0


ADVERSARIES = {cls.name: cls for cls in (Adversary, Silent, Equivocate, Censor, Delayer, Suspender, WithholdBody,
                                         DoctoredProof)}


def build_adversary(specs: list, f: int) -> Adversary:
    """Adversary from a list of {"kind": ..., "parties": [...], ...} mappings"""
    parts = []
    for spec in specs:
        spec = dict(spec)
        kind = spec.pop("kind")
        cls = ADVERSARIES.get(kind)
        if cls is None:
            raise ValueError(f"unknown adversary kind {kind!r}")
        parts.append(cls(spec.pop("parties", ()), **spec))
    adversary = parts[0] if len(parts) == 1 else Composite(parts) if parts else Adversary()
    if len(adversary.byzantine) > f:
        raise ValueError(f"{len(adversary.byzantine)} byzantine parties exceed f={f}")
    return adversary
