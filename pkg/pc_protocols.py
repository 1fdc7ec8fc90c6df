"""Prefix Consensus engines: 3-round, optimistic and 2-round (n >= 5f+1) variants.

Each party runs one `PcEngine` per instance. Votes are plain objects that embed
the full quorum certificates they were derived from; `Verifier` checks them
recursively and caches what it has already accepted.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, model_validator

from crypto import DomainTag, KeyRegistry, MessageKind, Signature
from errors import PreconditionViolation, ProtocolViolation
from prefix_core import BOT, consistent, is_prefix, longest_supported_prefix, mce, mcp
from reactor import Broadcast, Deliver, InputEvent, Output, ProtocolEngine

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    THREE_ROUND = "three_round"
    OPTIMISTIC = "optimistic"
    FAST_5F1 = "fast_5f1"


class PcConfig(BaseModel):
    """Parameters of one Prefix Consensus instance"""
    model_config = ConfigDict(frozen=True)

    n: int
    f: int
    L: int
    variant: Variant = Variant.THREE_ROUND
    instance: str = "pc"
    prefix_signatures: bool = False

    @model_validator(mode="after")
    def check_resilience(self):
        if self.f < 0 or self.L < 1:
            raise ValueError("f must be >= 0 and L >= 1")
        if self.variant == Variant.FAST_5F1:
            if self.n < 5 * self.f + 1:
                raise ValueError(f"fast_5f1 requires n >= 5f+1 (n={self.n}, f={self.f})")
        elif self.n < 3 * self.f + 1:
            raise ValueError(f"{self.variant.value} requires n >= 3f+1 (n={self.n}, f={self.f})")
        return self

    @property
    def quorum(self) -> int:
        return self.n - self.f

    @property
    def qc1_support(self) -> int:
        if self.variant == Variant.FAST_5F1:
            return self.n - 2 * self.f
        return self.f + 1

    @property
    def rounds(self) -> int:
        return {Variant.THREE_ROUND: 3, Variant.OPTIMISTIC: 4, Variant.FAST_5F1: 2}[self.variant]

    def tag(self, round_: int) -> DomainTag:
        return DomainTag(MessageKind(round_), self.instance)

    def with_instance(self, instance: str) -> "PcConfig":
        return self.model_copy(update={"instance": instance})


@dataclass(frozen=True)
class Vote:
    round: int
    instance: str
    sender: int
    value: tuple
    signature: Signature
    qcs: tuple = ()
    prefix_signatures: tuple = ()

    def key(self) -> tuple:
        return (self.round, self.sender, self.signature.blob, self.value)


def prefix_messages(value: tuple) -> list:
    """What a prefix-signing party signs: every prefix of `value`, then `value` closed by BOT.

    The closing entry marks where the vote ends; no longer vote signs it.
    """
    value = tuple(value)
    return [value[:k] for k in range(len(value) + 1)] + [value + (BOT,)]


def sign_prefixes(sign_vector, tag: DomainTag, value: tuple) -> tuple:
    """(signature on value, prefix signatures) using a `sign_vector(tag, vec)` callable"""
    sigs = tuple(sign_vector(tag, m) for m in prefix_messages(value))
    return sigs[len(value)], sigs


@dataclass(frozen=True)
class QuorumCertificate:
    round: int
    votes: tuple

    @property
    def values(self) -> list:
        return [v.value for v in self.votes]

    def key(self) -> tuple:
        return (self.round,) + tuple(v.key() for v in self.votes)


@dataclass
class PcOutput:
    low: Optional[tuple] = None
    high: Optional[tuple] = None
    opt: Optional[tuple] = None
    low_proof: Optional[QuorumCertificate] = None
    high_proof: Optional[QuorumCertificate] = None

    @property
    def complete(self) -> bool:
        return self.low is not None and self.high is not None


def _quorum_values(votes, cfg: PcConfig, round_: int, verifier=None) -> list:
    votes = list(votes)
    if len(votes) != cfg.quorum:
        raise PreconditionViolation(f"round-{round_} certificate needs {cfg.quorum} votes, got {len(votes)}")
    if len({v.sender for v in votes}) != len(votes):
        raise PreconditionViolation(f"round-{round_} certificate repeats a sender")
    for v in votes:
        if v.round != round_:
            raise PreconditionViolation(f"expected round-{round_} vote, got round {v.round}")
        if verifier is not None and not verifier.vote(v):
            raise PreconditionViolation(f"unverifiable vote from party {v.sender}")
    return [v.value for v in votes]


def _checked_mce(values, what: str) -> tuple:
    ext = mce(values)
    if ext is None:
        raise ProtocolViolation(f"{what}: certified values conflict, quorum intersection broken")
    return ext


def qc1_certify(votes, cfg: PcConfig, verifier=None):
    """THREE_ROUND/FAST_5F1 -> x; OPTIMISTIC -> (x, y)"""
    values = _quorum_values(votes, cfg, 1, verifier)
    x = longest_supported_prefix(values, cfg.qc1_support)
    if cfg.variant == Variant.OPTIMISTIC:
        return x, mcp(values)
    return x


def qc2_certify(votes, cfg: PcConfig, verifier=None):
    """THREE_ROUND -> x_p; FAST_5F1 -> (low, high); OPTIMISTIC -> (y_p, y_e)"""
    values = _quorum_values(votes, cfg, 2, verifier)
    if cfg.variant == Variant.THREE_ROUND:
        return mcp(values)
    return mcp(values), _checked_mce(values, "qc2")


def qc3_certify(votes, cfg: PcConfig, verifier=None):
    """THREE_ROUND -> (low, high); OPTIMISTIC -> (z_p, early high or None)"""
    if cfg.variant == Variant.FAST_5F1:
        raise PreconditionViolation("fast_5f1 has no third round")
    values = _quorum_values(votes, cfg, 3, verifier)
    if cfg.variant == Variant.THREE_ROUND:
        return mcp(values), _checked_mce(values, "qc3")
    return mcp(values), mce(values)


def qc4_certify(votes, cfg: PcConfig, verifier=None):
    """OPTIMISTIC only -> (low, high)"""
    if cfg.variant != Variant.OPTIMISTIC:
        raise PreconditionViolation("only the optimistic variant has a fourth round")
    values = _quorum_values(votes, cfg, 4, verifier)
    return mcp(values), _checked_mce(values, "qc4")


def qc12_certify(qc1_value: tuple, qc2_value: tuple) -> tuple:
    """Optimistic round-3 value z from QC1's x and QC2's y_e"""
    x, _ = qc1_value
    _, y_e = qc2_value
    return x if is_prefix(y_e, x) else y_e


CERTIFIERS = {1: qc1_certify, 2: qc2_certify, 3: qc3_certify, 4: qc4_certify}


class Verifier:
    """Recursive vote/QC verification with a cache of accepted votes and certified QC values.

    Verification is a pure function of the objects, so one instance may be
    shared by every party of a simulated run.
    """

    def __init__(self, cfg: PcConfig, registry: KeyRegistry):
        self.cfg = cfg
        self.registry = registry
        self._votes: set = set()
        self._qcs: dict = {}

    def vote(self, vote) -> bool:
        if not isinstance(vote, Vote):
            return False
        try:
            key = vote.key()
            if key in self._votes:
                return True
            ok = self._check_vote(vote)
        except (TypeError, ValueError, AttributeError, PreconditionViolation, ProtocolViolation):
            ok = False
        if ok:
            self._votes.add(key)
        return ok

    def certified(self, qc, round_: int):
        """Certified value(s) of a fully verified QC, or None when it does not verify"""
        if not isinstance(qc, QuorumCertificate) or qc.round != round_:
            return None
        try:
            key = qc.key()
        except (TypeError, AttributeError):
            return None
        if key in self._qcs:
            return self._qcs[key]
        if any(not isinstance(v, Vote) for v in qc.votes):
            return None
        try:
            value = CERTIFIERS[round_](qc.votes, self.cfg, self)
        except (PreconditionViolation, ProtocolViolation, KeyError):
            return None
        self._qcs[key] = value
        return value

    def qc(self, qc, round_: int) -> bool:
        return self.certified(qc, round_) is not None

    def _check_vote(self, vote: Vote) -> bool:
        cfg = self.cfg
        if vote.instance != cfg.instance or not 1 <= vote.round <= cfg.rounds:
            return False
        if not isinstance(vote.value, tuple) or len(vote.value) > cfg.L:
            return False
        if not all(isinstance(e, bytes) for e in vote.value):
            return False
        tag = cfg.tag(vote.round)
        if not self.registry.verify_vector(vote.sender, tag, vote.value, vote.signature):
            return False
        if cfg.prefix_signatures or vote.prefix_signatures:
            messages = prefix_messages(vote.value)
            if len(vote.prefix_signatures) != len(messages):
                return False
            for message, sig in zip(messages, vote.prefix_signatures):
                if not self.registry.verify_vector(vote.sender, tag, message, sig):
                    return False
        return self._check_justification(vote)

    def _check_justification(self, vote: Vote) -> bool:
        cfg, r, qcs = self.cfg, vote.round, vote.qcs
        if r == 1:
            return qcs == ()
        if r == 2:
            if len(qcs) != 1:
                return False
            value = self.certified(qcs[0], 1)
            if value is None:
                return False
            expected = value[1] if cfg.variant == Variant.OPTIMISTIC else value
            return vote.value == expected
        if r == 3 and cfg.variant == Variant.THREE_ROUND:
            if len(qcs) != 1:
                return False
            return self.certified(qcs[0], 2) == vote.value
        if r == 3 and cfg.variant == Variant.OPTIMISTIC:
            if len(qcs) != 2:
                return False
            v1 = self.certified(qcs[0], 1)
            v2 = self.certified(qcs[1], 2)
            if v1 is None or v2 is None:
                return False
            return qc12_certify(v1, v2) == vote.value
        if r == 4 and cfg.variant == Variant.OPTIMISTIC:
            if len(qcs) != 1:
                return False
            v3 = self.certified(qcs[0], 3)
            return v3 is not None and v3[0] == vote.value
        return False


def proof_outputs(proof, cfg: PcConfig, verifier: Verifier) -> dict:
    """Stage outputs a proof certifies: {'low': ..., 'high': ...}; empty when it certifies nothing"""
    if not isinstance(proof, QuorumCertificate):
        return {}
    if cfg.variant == Variant.THREE_ROUND:
        value = verifier.certified(proof, 3) if proof.round == 3 else None
        return {"low": value[0], "high": value[1]} if value else {}
    if cfg.variant == Variant.FAST_5F1:
        value = verifier.certified(proof, 2) if proof.round == 2 else None
        return {"low": value[0], "high": value[1]} if value else {}
    value = verifier.certified(proof, proof.round) if proof.round in (2, 3, 4) else None
    if value is None:
        return {}
    if proof.round == 2:
        y_p, _ = value
        return {"low": y_p, "high": y_p} if len(y_p) == cfg.L else {}
    if proof.round == 3:
        _, early = value
        return {"high": early} if early is not None else {}
    return {"low": value[0], "high": value[1]}


def predicate_low(v, proof, cfg: PcConfig, verifier: Verifier) -> bool:
    return isinstance(v, tuple) and proof_outputs(proof, cfg, verifier).get("low") == v


def predicate_high(v, proof, cfg: PcConfig, verifier: Verifier) -> bool:
    return isinstance(v, tuple) and proof_outputs(proof, cfg, verifier).get("high") == v


class PcEngine(ProtocolEngine):
    """One party's Prefix Consensus reactor"""

    def __init__(self, party: int, cfg: PcConfig, registry: KeyRegistry, verifier: Optional[Verifier] = None):
        super().__init__(party)
        self.cfg = cfg
        self.registry = registry
        self.verifier = verifier or Verifier(cfg, registry)
        self.input: Optional[tuple] = None
        self.votes = {r: [] for r in range(1, cfg.rounds + 1)}
        self.qcs: dict = {}
        self.sent: set = set()
        self.result = PcOutput()
        self.certified: dict = {}

    # Step 1: events
    def step(self, event) -> list:
        if isinstance(event, InputEvent):
            return self._on_input(event.value)
        if isinstance(event, Deliver):
            return self._on_vote(event.sender, event.message)
        self.dropped += 1
        return []

    def _on_input(self, value) -> list:
        if self.input is not None:
            logger.debug("party %s: second input ignored", self.party)
            return []
        value = tuple(value)
        if len(value) > self.cfg.L:
            raise PreconditionViolation(f"input length {len(value)} exceeds L={self.cfg.L}")
        self.input = value
        actions = [self._broadcast(1, value)]
        return actions + self._progress()

    def _on_vote(self, sender: int, vote) -> list:
        if not isinstance(vote, Vote) or vote.instance != self.cfg.instance or vote.sender != sender:
            self.dropped += 1
            return []
        if not self.verifier.vote(vote):
            self.dropped += 1
            logger.debug("party %s: dropped unverifiable round-%s vote from %s", self.party, vote.round, sender)
            return []
        r = vote.round
        if r in self.qcs or any(v.sender == sender for v in self.votes[r]):
            return []
        self.votes[r].append(vote)
        if len(self.votes[r]) == self.cfg.quorum:
            self.qcs[r] = QuorumCertificate(r, tuple(self.votes[r]))
            self.certified[r] = CERTIFIERS[r](self.qcs[r].votes, self.cfg)
        return self._progress()

    # Step 2: rules, in round order
    def _progress(self) -> list:
        if self.input is None:
            return []
        variant = self.cfg.variant
        if variant == Variant.THREE_ROUND:
            return self._progress_three_round()
        if variant == Variant.FAST_5F1:
            return self._progress_fast()
        return self._progress_optimistic()

    def _progress_three_round(self) -> list:
        actions = []
        if 1 in self.qcs and 2 not in self.sent:
            actions.append(self._broadcast(2, self.certified[1], (self.qcs[1],)))
        if 2 in self.qcs and 3 not in self.sent:
            actions.append(self._broadcast(3, self.certified[2], (self.qcs[2],)))
        if 3 in self.qcs and self.result.low is None:
            low, high = self.certified[3]
            actions += self._output("low", low, self.qcs[3]) + self._output("high", high, self.qcs[3])
        return actions

    def _progress_fast(self) -> list:
        actions = []
        if 1 in self.qcs and 2 not in self.sent:
            actions.append(self._broadcast(2, self.certified[1], (self.qcs[1],)))
        if 2 in self.qcs and self.result.low is None:
            low, high = self.certified[2]
            actions += self._output("low", low, self.qcs[2]) + self._output("high", high, self.qcs[2])
        return actions

    def _progress_optimistic(self) -> list:
        actions = []
        qcs, certified, result = self.qcs, self.certified, self.result
        if 1 in qcs and 2 not in self.sent:
            _, y = certified[1]
            actions.append(self._broadcast(2, y, (qcs[1],)))
        if 2 in qcs and result.opt is None:
            y_p, _ = certified[2]
            actions += self._output("opt", y_p, qcs[2])
            if len(y_p) == self.cfg.L:
                actions += self._output("low", y_p, qcs[2]) + self._output("high", y_p, qcs[2])
        if 1 in qcs and 2 in qcs and 3 not in self.sent:
            z = qc12_certify(certified[1], certified[2])
            actions.append(self._broadcast(3, z, (qcs[1], qcs[2])))
        if 3 in qcs and 4 not in self.sent:
            z_p, early_high = certified[3]
            if early_high is not None and result.high is None:
                actions += self._output("high", early_high, qcs[3])
            actions.append(self._broadcast(4, z_p, (qcs[3],)))
        if 4 in qcs and not result.complete:
            low, high = certified[4]
            if result.low is None:
                actions += self._output("low", low, qcs[4])
            if result.high is None:
                actions += self._output("high", high, qcs[4])
        return actions

    def _broadcast(self, round_: int, value: tuple, qcs: tuple = ()) -> Broadcast:
        tag = self.cfg.tag(round_)
        prefix_sigs = ()
        if self.cfg.prefix_signatures:
            signature, prefix_sigs = sign_prefixes(self.registry.signer(self.party).sign_vector, tag, value)
        else:
            signature = self.registry.sign_vector(self.party, tag, value)
        self.sent.add(round_)
        vote = Vote(round_, self.cfg.instance, self.party, value, signature, qcs, prefix_sigs)
        return Broadcast(vote)

    def _output(self, stage: str, value: tuple, proof: QuorumCertificate) -> list:
        if getattr(self.result, stage) is not None:
            raise ProtocolViolation(f"party {self.party}: {stage} output twice")
        setattr(self.result, stage, value)
        if stage in ("low", "high"):
            setattr(self.result, f"{stage}_proof", proof)
        return [Output(stage, value, proof)]


def certified_x_values(engines) -> list:
    """QC1-certified x of every engine that formed a QC1"""
    values = []
    for engine in engines:
        if 1 in engine.certified:
            value = engine.certified[1]
            values.append(value[0] if engine.cfg.variant == Variant.OPTIMISTIC else value)
    return values


def pairwise_consistent_values(values) -> bool:
    return all(consistent(a, b) for i, a in enumerate(values) for b in values[i + 1:])


class VerifierPool:
    """One Verifier per instance id, shared by all parties that see that instance"""

    def __init__(self, registry: KeyRegistry):
        self.registry = registry
        self._by_instance: dict = {}

    def get(self, cfg: PcConfig) -> Verifier:
        verifier = self._by_instance.get(cfg.instance)
        if verifier is None or verifier.cfg != cfg:
            verifier = Verifier(cfg, self.registry)
            self._by_instance[cfg.instance] = verifier
        return verifier
