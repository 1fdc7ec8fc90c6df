"""Communication-optimized encodings of votes and quorum certificates.

Votes carry signatures on every prefix of their value, which lets a QC be
shipped as one certified vector plus, per signer, a short descriptor of what it
signed relative to that vector:

* ``CompactQC1``   - certified x; each vote truncated to its common prefix with
  x extended by one element when possible, stored as (length, next element);
* ``CompactQC2``   - x_p signed by the whole quorum plus either the full-length
  QC1 (only when |x_p| = L) or divergence witnesses showing two quorum members
  continue x_p differently;
* ``CompactRange`` - shortest and longest certified values with their own
  certificates and an aggregate whose members are lengths relative to the
  longest. Serves as QC3 of the 3-round protocol, QC2 of the 2-round protocol
  and QC2/QC4 of the optimistic protocol;
* ``CompactOptQC1`` / ``CompactOptQC3`` - optimistic round-1 and round-3
  packaging built from the same pieces.

Vectors are padded with BOT to L at this boundary only; engines never see the
padding. A prefix signature on y only says the vote starts with y; every vote
also carries a closing signature on its value followed by BOT, which says the
vote is exactly that value. Wherever a compact form claims a vote ends (QC1
truncations that stop inside x, the terminal witness of a QC2 whose quorum
values all equal x_p, range and round-3 members) it must show the closing
signature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from crypto import (AggregateSignature, DomainTag, KeyRegistry, MessageDescriptor, MessageKind, Signature,
                    describe_against, verify_aggregate)
from errors import DecodeError, EncodeError, PreconditionViolation, ProtocolViolation
from pc_protocols import CERTIFIERS, PcConfig, QuorumCertificate, Variant, Verifier, Vote, qc12_certify
from prefix_core import BOT, common_prefix_length, is_prefix, longest_supported_prefix, mce, mcp
from wire_format import Reader, Writer, encode_message, register

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PaddedVector:
    elems: tuple
    logical_length: int

    @classmethod
    def pad(cls, vec, L: int) -> "PaddedVector":
        vec = tuple(vec)
        if len(vec) > L:
            raise EncodeError(f"vector of length {len(vec)} exceeds L={L}")
        return cls(vec + (BOT,) * (L - len(vec)), len(vec))

    @property
    def capacity(self) -> int:
        return len(self.elems)

    def unpad(self) -> tuple:
        return self.elems[:self.logical_length]


@dataclass(frozen=True)
class SignedSet:
    """Descriptors (signer, length, tail) against an implied reference vector plus concatenated signatures"""
    descriptors: tuple
    blob: bytes

    @property
    def signers(self) -> tuple:
        return tuple(d.signer for d in self.descriptors)

    def as_aggregate(self, tag: DomainTag, reference: tuple) -> AggregateSignature:
        return AggregateSignature(tag, tuple(reference), self.descriptors, self.blob)


@dataclass(frozen=True)
class CompactVote:
    round: int
    instance: str
    sender: int
    value: PaddedVector
    signatures: tuple
    justification: tuple = ()


@dataclass(frozen=True)
class CompactQC1:
    instance: str
    x: PaddedVector
    votes: SignedSet


@dataclass(frozen=True)
class DivergenceWitness:
    signer: int
    next: object
    signature: Signature
    qc1: Optional[CompactQC1] = None


@dataclass(frozen=True)
class CompactQC2:
    round: int
    instance: str
    x_p: PaddedVector
    multisig: SignedSet
    full_qc1: Optional[CompactQC1] = None
    witnesses: tuple = ()


@dataclass(frozen=True)
class CompactRange:
    round: int
    instance: str
    low: PaddedVector
    low_proof: object
    high: PaddedVector
    high_proof: object
    members: SignedSet


@dataclass(frozen=True)
class CompactOptQC1:
    x_part: CompactQC1
    y_part: CompactQC2


@dataclass(frozen=True)
class CompactOptQC3:
    instance: str
    reference: PaddedVector
    members: SignedSet
    shortest: int
    shortest_qc1: CompactOptQC1
    shortest_qc2: CompactRange


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str = "ok"
    value: object = field(default=None, compare=False)

    def __bool__(self):
        return self.ok


def _fail(reason: str) -> Verdict:
    return Verdict(False, reason)


# Step 1: building compact forms from plain votes and QCs

def _prefix_sig(vote: Vote, k: int) -> Signature:
    if len(vote.prefix_signatures) != len(vote.value) + 2:
        raise EncodeError(f"round-{vote.round} vote of party {vote.sender} lacks prefix signatures")
    return vote.prefix_signatures[k]


def _closing_sig(vote: Vote) -> Signature:
    return _prefix_sig(vote, len(vote.value) + 1)


def _closed(value: tuple) -> tuple:
    return tuple(value) + (BOT,)


def _open(message: tuple) -> tuple:
    return message[:-1] if message and message[-1] is BOT else message


def _signed_set(entries, reference: tuple) -> SignedSet:
    items = sorted(entries, key=lambda e: e[0])
    descriptors = tuple(describe_against(reference, signer, message) for signer, message, _ in items)
    return SignedSet(descriptors, b"".join(sig.blob for _, _, sig in items))


def compact_qc1(qc: QuorumCertificate, cfg: PcConfig) -> CompactQC1:
    x = longest_supported_prefix(qc.values, cfg.qc1_support)
    entries = []
    for vote in qc.votes:
        shared = common_prefix_length(vote.value, x)
        if shared < len(vote.value):
            entries.append((vote.sender, vote.value[:shared + 1], _prefix_sig(vote, shared + 1)))
        else:
            entries.append((vote.sender, _closed(vote.value), _closing_sig(vote)))
    return CompactQC1(qc.votes[0].instance, PaddedVector.pad(x, cfg.L), _signed_set(entries, x))


def _mcp_certificate(qc: QuorumCertificate, cfg: PcConfig, with_qc1: bool) -> CompactQC2:
    votes = sorted(qc.votes, key=lambda v: v.sender)
    x_p = mcp(qc.values)
    k = len(x_p)
    multisig = _signed_set([(v.sender, x_p, _prefix_sig(v, k)) for v in votes], x_p)
    padded = PaddedVector.pad(x_p, cfg.L)
    if k == cfg.L:
        full = compact_qc1(votes[0].qcs[0], cfg) if with_qc1 else None
        return CompactQC2(qc.round, votes[0].instance, padded, multisig, full, ())
    first_by_next: dict = {}
    for vote in votes:
        nxt = vote.value[k] if len(vote.value) > k else BOT
        first_by_next.setdefault(nxt, vote)
    chosen = list(first_by_next.items())[:2]
    if len(chosen) == 1 and chosen[0][0] is not BOT:
        raise ProtocolViolation("quorum values share a longer prefix than their mcp")
    witnesses = []
    for nxt, vote in chosen:
        sig = _closing_sig(vote) if nxt is BOT else _prefix_sig(vote, k + 1)
        qc1 = compact_qc1(vote.qcs[0], cfg) if with_qc1 else None
        witnesses.append(DivergenceWitness(vote.sender, nxt, sig, qc1))
    return CompactQC2(qc.round, votes[0].instance, padded, multisig, None, tuple(witnesses))


def compact_qc2(qc: QuorumCertificate, cfg: PcConfig) -> CompactQC2:
    return _mcp_certificate(qc, cfg, with_qc1=True)


def compact_opt_qc1(qc: QuorumCertificate, cfg: PcConfig) -> CompactOptQC1:
    return CompactOptQC1(compact_qc1(qc, cfg), _mcp_certificate(qc, cfg, with_qc1=False))


def _compact_range(qc: QuorumCertificate, cfg: PcConfig, sub_builder) -> CompactRange:
    values = qc.values
    low, high = mcp(values), mce(values)
    if high is None:
        raise EncodeError(f"round-{qc.round} values conflict; no range packaging exists")
    short_vote = next(v for v in qc.votes if len(v.value) == len(low))
    long_vote = next(v for v in qc.votes if len(v.value) == len(high))
    members = _signed_set([(v.sender, _closed(v.value), _closing_sig(v)) for v in qc.votes], high)
    return CompactRange(qc.round, qc.votes[0].instance,
                        PaddedVector.pad(low, cfg.L), sub_builder(short_vote),
                        PaddedVector.pad(high, cfg.L), sub_builder(long_vote), members)


def compact_opt_qc3(qc: QuorumCertificate, cfg: PcConfig) -> CompactOptQC3:
    reference = max(qc.values, key=len)
    short_vote = min(qc.votes, key=lambda v: (len(v.value), v.sender))
    members = _signed_set([(v.sender, _closed(v.value), _closing_sig(v)) for v in qc.votes], reference)
    return CompactOptQC3(qc.votes[0].instance, PaddedVector.pad(reference, cfg.L), members, short_vote.sender,
                         compact_opt_qc1(short_vote.qcs[0], cfg),
                         _compact_range(short_vote.qcs[1], cfg, lambda v: compact_opt_qc1(v.qcs[0], cfg)))


def compact_qc(qc: QuorumCertificate, cfg: PcConfig):
    """Compact packaging of a plain QC for the configured variant"""
    variant, r = cfg.variant, qc.round
    if variant == Variant.THREE_ROUND:
        if r == 1:
            return compact_qc1(qc, cfg)
        if r == 2:
            return compact_qc2(qc, cfg)
        return _compact_range(qc, cfg, lambda v: compact_qc2(v.qcs[0], cfg))
    if variant == Variant.FAST_5F1:
        if r == 1:
            return compact_qc1(qc, cfg)
        return _compact_range(qc, cfg, lambda v: compact_qc1(v.qcs[0], cfg))
    if r == 1:
        return compact_opt_qc1(qc, cfg)
    if r == 2:
        return _compact_range(qc, cfg, lambda v: compact_opt_qc1(v.qcs[0], cfg))
    if r == 3:
        return compact_opt_qc3(qc, cfg)
    return _compact_range(qc, cfg, lambda v: compact_opt_qc3(v.qcs[0], cfg))


def _needs_prefix_signatures(variant: Variant, round_: int) -> bool:
    return round_ == 1 or (variant == Variant.THREE_ROUND and round_ == 2)


def compact_vote(vote: Vote, cfg: PcConfig) -> CompactVote:
    if _needs_prefix_signatures(cfg.variant, vote.round):
        sigs = tuple(_prefix_sig(vote, k) for k in range(1, len(vote.value) + 1)) + (_closing_sig(vote),)
    else:
        sigs = (_closing_sig(vote),)
    justification = tuple(compact_qc(qc, cfg) for qc in vote.qcs)
    return CompactVote(vote.round, vote.instance, vote.sender, PaddedVector.pad(vote.value, cfg.L), sigs,
                       justification)


# Step 2: verification, mirroring the enumerated checks

def _tag(round_: int, instance: str) -> DomainTag:
    return DomainTag(MessageKind(round_), instance)


def _padded_ok(pv, cfg: PcConfig) -> bool:
    return (isinstance(pv, PaddedVector) and pv.capacity == cfg.L and 0 <= pv.logical_length <= cfg.L
            and all(e is BOT for e in pv.elems[pv.logical_length:])
            and all(isinstance(e, bytes) for e in pv.unpad()))


def verify_compact_qc1(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    if not isinstance(qc, CompactQC1):
        return _fail("not-a-compact-qc1")
    if qc.instance != cfg.instance:
        return _fail("instance-mismatch")
    if not _padded_ok(qc.x, cfg):
        return _fail("malformed-x")
    x = qc.x.unpad()
    descriptors = qc.votes.descriptors
    if len(descriptors) != cfg.quorum:
        return _fail("quorum-size")
    # (1) every truncated vote either closes or leaves x after exactly one element
    for d in descriptors:
        if not 0 <= d.length <= len(x) or len(d.tail) != 1:
            return _fail("malformed-truncation")
        nxt = d.tail[0]
        if nxt is BOT:
            continue
        if not isinstance(nxt, bytes) or d.length >= cfg.L:
            return _fail("malformed-truncation")
        if d.length < len(x) and nxt == x[d.length]:
            return _fail("truncation-not-maximal")
    agg = AggregateSignature(_tag(1, qc.instance), x, descriptors, qc.votes.blob)
    # (2) aggregate covers every signer's truncated vote
    if not verify_aggregate(registry, agg):
        return _fail("aggregate-signature")
    # (3) recertification over the truncated votes yields x
    truncated = [_open(agg.message_of(d)) for d in agg.descriptors]
    if longest_supported_prefix(truncated, cfg.qc1_support) != x:
        return _fail("recertification-mismatch")
    return Verdict(True, "ok", x)


def verify_compact_qc2(qc, cfg: PcConfig, registry: KeyRegistry, with_qc1: bool = True) -> Verdict:
    if not isinstance(qc, CompactQC2):
        return _fail("not-a-compact-qc2")
    if qc.instance != cfg.instance:
        return _fail("instance-mismatch")
    if not _padded_ok(qc.x_p, cfg):
        return _fail("malformed-x_p")
    x_p = qc.x_p.unpad()
    tag = _tag(qc.round, qc.instance)
    descriptors = qc.multisig.descriptors
    if len(descriptors) != cfg.quorum:
        return _fail("quorum-size")
    if any(d.length != len(x_p) or d.tail for d in descriptors):
        return _fail("multisig-not-on-x_p")
    if not verify_aggregate(registry, qc.multisig.as_aggregate(tag, x_p)):
        return _fail("multisig-signature")
    if qc.full_qc1 is not None or (not with_qc1 and not qc.witnesses and len(x_p) == cfg.L):
        if qc.witnesses:
            return _fail("malformed-proof")
        if len(x_p) != cfg.L:
            return _fail("full-length-guard")
        if qc.full_qc1 is not None:
            inner = verify_compact_qc1(qc.full_qc1, cfg, registry)
            if not inner:
                return _fail("qc1-" + inner.reason)
            if inner.value != x_p:
                return _fail("qc1-mismatch")
        elif with_qc1:
            return _fail("missing-qc1")
        return Verdict(True, "ok", x_p)
    witnesses = qc.witnesses
    if len(witnesses) == 1:
        if witnesses[0].next is not BOT:
            return _fail("single-witness-not-terminal")
    elif len(witnesses) == 2:
        if witnesses[0].next == witnesses[1].next:
            return _fail("witnesses-agree")
        if witnesses[0].signer == witnesses[1].signer:
            return _fail("witness-signers-equal")
    else:
        return _fail("malformed-proof")
    signers = set(qc.multisig.signers)
    for w in witnesses:
        if w.signer not in signers:
            return _fail("witness-not-in-quorum")
        if w.next is not BOT and not isinstance(w.next, bytes):
            return _fail("malformed-witness")
        # a terminal witness signs x_p closed by BOT: the signer's vote is exactly x_p
        extended = x_p + (w.next,)
        if not registry.verify_vector(w.signer, tag, extended, w.signature):
            return _fail("witness-signature")
        if not with_qc1:
            continue
        inner = verify_compact_qc1(w.qc1, cfg, registry)
        if not inner:
            return _fail("witness-qc1-" + inner.reason)
        certified = inner.value
        if w.next is BOT and certified != x_p:
            return _fail("witness-not-certified")
        if w.next is not BOT and not is_prefix(extended, certified):
            return _fail("witness-not-certified")
    return Verdict(True, "ok", x_p)


def verify_compact_opt_qc1(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    if not isinstance(qc, CompactOptQC1):
        return _fail("not-an-optimistic-qc1")
    x_part = verify_compact_qc1(qc.x_part, cfg, registry)
    if not x_part:
        return _fail("x-" + x_part.reason)
    y_part = verify_compact_qc2(qc.y_part, cfg, registry, with_qc1=False)
    if not y_part:
        return _fail("y-" + y_part.reason)
    if qc.y_part.round != 1 or set(qc.y_part.multisig.signers) != set(qc.x_part.votes.signers):
        return _fail("x-y-quorum-mismatch")
    return Verdict(True, "ok", (x_part.value, y_part.value))


def _sub_value(verdict: Verdict, proof):
    if isinstance(proof, CompactOptQC1):
        return verdict.value[1]
    if isinstance(proof, CompactOptQC3):
        return verdict.value[0]
    return verdict.value


_RANGE_PROOFS = {
    (Variant.THREE_ROUND, 3): (CompactQC2, 2),
    (Variant.FAST_5F1, 2): (CompactQC1, None),
    (Variant.OPTIMISTIC, 2): (CompactOptQC1, None),
    (Variant.OPTIMISTIC, 4): (CompactOptQC3, None),
}


def _proof_kind_ok(proof, kind: type, round_: Optional[int]) -> bool:
    return isinstance(proof, kind) and (round_ is None or proof.round == round_)


def verify_compact_range(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    if not isinstance(qc, CompactRange):
        return _fail("not-a-compact-range")
    if qc.instance != cfg.instance:
        return _fail("instance-mismatch")
    expected = _RANGE_PROOFS.get((cfg.variant, qc.round))
    if expected is None:
        return _fail("unexpected-range-round")
    if not _padded_ok(qc.low, cfg) or not _padded_ok(qc.high, cfg):
        return _fail("malformed-bounds")
    low, high = qc.low.unpad(), qc.high.unpad()
    descriptors = qc.members.descriptors
    if len(descriptors) != cfg.quorum:
        return _fail("quorum-size")
    if any(d.tail != (BOT,) for d in descriptors):
        return _fail("member-not-prefix-of-longest")
    lengths = [d.length for d in descriptors]
    if min(lengths) != len(low):
        return _fail("shortest-not-minimal")
    if max(lengths) != len(high):
        return _fail("longest-not-maximal")
    if not is_prefix(low, high):
        return _fail("shortest-not-prefix")
    if not verify_aggregate(registry, qc.members.as_aggregate(_tag(qc.round, qc.instance), high)):
        return _fail("aggregate-signature")
    for name, bound, proof in (("shortest", low, qc.low_proof), ("longest", high, qc.high_proof)):
        if not _proof_kind_ok(proof, *expected):
            return _fail(f"{name}-wrong-proof-kind")
        inner = verify_compact(proof, cfg, registry)
        if not inner:
            return _fail(f"{name}-{inner.reason}")
        if _sub_value(inner, proof) != bound:
            return _fail(f"{name}-not-certified")
    return Verdict(True, "ok", (low, high))


def verify_compact_qc3(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    if cfg.variant == Variant.OPTIMISTIC:
        return verify_compact_opt_qc3(qc, cfg, registry)
    if not isinstance(qc, CompactRange) or qc.round != 3:
        return _fail("not-a-compact-qc3")
    return verify_compact_range(qc, cfg, registry)


def verify_compact_opt_qc3(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    if not isinstance(qc, CompactOptQC3):
        return _fail("not-an-optimistic-qc3")
    if qc.instance != cfg.instance or not _padded_ok(qc.reference, cfg):
        return _fail("malformed-reference")
    descriptors = qc.members.descriptors
    if len(descriptors) != cfg.quorum:
        return _fail("quorum-size")
    agg = qc.members.as_aggregate(_tag(3, qc.instance), qc.reference.unpad())
    if not verify_aggregate(registry, agg):
        return _fail("aggregate-signature")
    closed = agg.messages()
    if any(not m or m[-1] is not BOT or any(e is BOT for e in m[:-1]) for m in closed.values()):
        return _fail("member-not-closed")
    messages = {signer: m[:-1] for signer, m in closed.items()}
    if any(len(m) > cfg.L for m in messages.values()):
        return _fail("member-too-long")
    if qc.shortest not in messages or len(messages[qc.shortest]) != min(len(m) for m in messages.values()):
        return _fail("shortest-not-minimal")
    first = verify_compact_opt_qc1(qc.shortest_qc1, cfg, registry)
    second = verify_compact_range(qc.shortest_qc2, cfg, registry)
    if not first or not second or qc.shortest_qc2.round != 2:
        return _fail("shortest-justification")
    if qc12_certify(first.value, second.value) != messages[qc.shortest]:
        return _fail("shortest-not-certified")
    values = list(messages.values())
    return Verdict(True, "ok", (mcp(values), mce(values)))


def verify_compact(qc, cfg: PcConfig, registry: KeyRegistry) -> Verdict:
    """Dispatch on the compact QC kind; the verdict's value is what the QC certifies"""
    if isinstance(qc, CompactQC1):
        return verify_compact_qc1(qc, cfg, registry)
    if isinstance(qc, CompactQC2):
        return verify_compact_qc2(qc, cfg, registry)
    if isinstance(qc, CompactRange):
        return verify_compact_range(qc, cfg, registry)
    if isinstance(qc, CompactOptQC1):
        return verify_compact_opt_qc1(qc, cfg, registry)
    if isinstance(qc, CompactOptQC3):
        return verify_compact_opt_qc3(qc, cfg, registry)
    return _fail("unknown-compact-kind")


def equivalence_harness(votes, cfg: PcConfig, registry: KeyRegistry) -> tuple:
    """(plain-certified, compact-certified) for one quorum of same-round votes"""
    votes = tuple(votes)
    if not votes:
        raise PreconditionViolation("vote multiset must be non-empty")
    round_ = votes[0].round
    plain = CERTIFIERS[round_](votes, cfg, Verifier(cfg, registry))
    verdict = verify_compact(compact_qc(QuorumCertificate(round_, votes), cfg), cfg, registry)
    if not verdict:
        logger.info("compact certificate rejected: %s", verdict.reason)
        return plain, None
    return plain, verdict.value


# Step 3: byte layout of the compact kinds

TAG_PADDED = 0x10
TAG_COMPACT_VOTE = 0x11
TAG_COMPACT_QC1 = 0x12
TAG_COMPACT_QC2 = 0x13
TAG_COMPACT_RANGE = 0x14
TAG_COMPACT_OPT_QC1 = 0x15
TAG_COMPACT_OPT_QC3 = 0x16


_MIXED_WIDTH = 0xFF


def _write_padded(w: Writer, pv: PaddedVector):
    """Fixed-width elements are packed and zero-padded to L; mixed widths fall back to length-prefixed entries"""
    logical = pv.unpad()
    widths = {len(e) for e in logical}
    w.u16(pv.capacity)
    w.u16(pv.logical_length)
    if len(widths) > 1 or any(width >= _MIXED_WIDTH for width in widths):
        w.u8(_MIXED_WIDTH)
        for elem in logical:
            w.value(elem)
        return
    width = widths.pop() if widths else 0
    w.u8(width)
    w.raw(b"".join(logical) + b"\x00" * (width * (pv.capacity - pv.logical_length)))


def _read_padded(r: Reader, field: str) -> PaddedVector:
    capacity = r.u16(field + ".L")
    logical = r.u16(field + ".logical_length")
    width = r.u8(field + ".width")
    if logical > capacity:
        raise DecodeError(field + ".logical_length", f"{logical} > L={capacity}")
    if width == _MIXED_WIDTH:
        elems = tuple(r.value(f"{field}.elems[{i}]") for i in range(logical))
    else:
        raw = r.raw(width * capacity, field + ".elems")
        elems = tuple(raw[i * width:(i + 1) * width] for i in range(logical))
    return PaddedVector(elems + (BOT,) * (capacity - logical), logical)


def _write_signed_set(w: Writer, s: SignedSet):
    w.u16(len(s.descriptors))
    for d in s.descriptors:
        w.u16(d.signer)
        w.u16(d.length)
        w.u8(len(d.tail))
        for elem in d.tail:
            w.value(elem)
    size = len(s.blob) // len(s.descriptors) if s.descriptors else 0
    w.u8(size)
    w.raw(s.blob)


def _read_signed_set(r: Reader, field: str) -> SignedSet:
    count = r.u16(field + ".count")
    descriptors = []
    for i in range(count):
        signer = r.u16(f"{field}[{i}].signer")
        length = r.u16(f"{field}[{i}].length")
        tail = tuple(r.value(f"{field}[{i}].tail") for _ in range(r.u8(f"{field}[{i}].tail_len")))
        descriptors.append(MessageDescriptor(signer, length, tail))
    size = r.u8(field + ".sig_size")
    return SignedSet(tuple(descriptors), r.raw(size * count, field + ".blob"))


def _write_optional(w: Writer, obj):
    if obj is None:
        w.u8(0)
    else:
        w.u8(1)
        w.obj(obj)


def _read_optional(r: Reader, field: str):
    return r.obj(field) if r.u8(field + ".present") else None


def _write_vote(w: Writer, v: CompactVote):
    w.str(v.instance)
    w.u8(v.round)
    w.u16(v.sender)
    _write_padded(w, v.value)
    w.u16(len(v.signatures))
    w.u8(len(v.signatures[0].blob) if v.signatures else 0)
    for sig in v.signatures:
        w.raw(sig.blob)
    w.u8(len(v.justification))
    for qc in v.justification:
        w.obj(qc)


def _read_vote(r: Reader, field: str) -> CompactVote:
    instance = r.str(field + ".instance")
    round_ = r.u8(field + ".round")
    sender = r.u16(field + ".sender")
    value = _read_padded(r, field + ".value")
    count = r.u16(field + ".signatures")
    size = r.u8(field + ".sig_size")
    sigs = tuple(Signature(sender, r.raw(size, f"{field}.signatures[{i}]")) for i in range(count))
    justification = tuple(r.obj(f"{field}.justification[{i}]") for i in range(r.u8(field + ".justification")))
    return CompactVote(round_, instance, sender, value, sigs, justification)


def _write_qc1(w: Writer, qc: CompactQC1):
    w.str(qc.instance)
    _write_padded(w, qc.x)
    _write_signed_set(w, qc.votes)


def _read_qc1(r: Reader, field: str) -> CompactQC1:
    return CompactQC1(r.str(field + ".instance"), _read_padded(r, field + ".x"), _read_signed_set(r, field + ".votes"))


def _write_qc2(w: Writer, qc: CompactQC2):
    w.u8(qc.round)
    w.str(qc.instance)
    _write_padded(w, qc.x_p)
    _write_signed_set(w, qc.multisig)
    _write_optional(w, qc.full_qc1)
    w.u8(len(qc.witnesses))
    for wit in qc.witnesses:
        w.u16(wit.signer)
        w.value(wit.next)
        w.signature(wit.signature)
        _write_optional(w, wit.qc1)


def _read_qc2(r: Reader, field: str) -> CompactQC2:
    round_ = r.u8(field + ".round")
    instance = r.str(field + ".instance")
    x_p = _read_padded(r, field + ".x_p")
    multisig = _read_signed_set(r, field + ".multisig")
    full = _read_optional(r, field + ".full_qc1")
    witnesses = []
    for i in range(r.u8(field + ".witnesses")):
        prefix = f"{field}.witnesses[{i}]"
        witnesses.append(DivergenceWitness(r.u16(prefix + ".signer"), r.value(prefix + ".next"),
                                           r.signature(prefix + ".signature"), _read_optional(r, prefix + ".qc1")))
    return CompactQC2(round_, instance, x_p, multisig, full, tuple(witnesses))


def _write_range(w: Writer, qc: CompactRange):
    w.u8(qc.round)
    w.str(qc.instance)
    _write_padded(w, qc.low)
    w.obj(qc.low_proof)
    _write_padded(w, qc.high)
    w.obj(qc.high_proof)
    _write_signed_set(w, qc.members)


def _read_range(r: Reader, field: str) -> CompactRange:
    round_ = r.u8(field + ".round")
    instance = r.str(field + ".instance")
    low = _read_padded(r, field + ".low")
    low_proof = r.obj(field + ".low_proof")
    high = _read_padded(r, field + ".high")
    high_proof = r.obj(field + ".high_proof")
    return CompactRange(round_, instance, low, low_proof, high, high_proof, _read_signed_set(r, field + ".members"))


def _write_opt_qc1(w: Writer, qc: CompactOptQC1):
    w.obj(qc.x_part)
    w.obj(qc.y_part)


def _read_opt_qc1(r: Reader, field: str) -> CompactOptQC1:
    return CompactOptQC1(r.obj(field + ".x_part"), r.obj(field + ".y_part"))


def _write_opt_qc3(w: Writer, qc: CompactOptQC3):
    w.str(qc.instance)
    _write_padded(w, qc.reference)
    _write_signed_set(w, qc.members)
    w.u16(qc.shortest)
    w.obj(qc.shortest_qc1)
    w.obj(qc.shortest_qc2)


def _read_opt_qc3(r: Reader, field: str) -> CompactOptQC3:
    instance = r.str(field + ".instance")
    reference = _read_padded(r, field + ".reference")
    members = _read_signed_set(r, field + ".members")
    shortest = r.u16(field + ".shortest")
    return CompactOptQC3(instance, reference, members, shortest,
                         r.obj(field + ".shortest_qc1"), r.obj(field + ".shortest_qc2"))


register(TAG_PADDED, "padded_vector", PaddedVector, _write_padded, _read_padded)
register(TAG_COMPACT_VOTE, "compact_vote", CompactVote, _write_vote, _read_vote)
register(TAG_COMPACT_QC1, "compact_qc1", CompactQC1, _write_qc1, _read_qc1)
register(TAG_COMPACT_QC2, "compact_qc2", CompactQC2, _write_qc2, _read_qc2)
register(TAG_COMPACT_RANGE, "compact_range", CompactRange, _write_range, _read_range)
register(TAG_COMPACT_OPT_QC1, "compact_opt_qc1", CompactOptQC1, _write_opt_qc1, _read_opt_qc1)
register(TAG_COMPACT_OPT_QC3, "compact_opt_qc3", CompactOptQC3, _write_opt_qc3, _read_opt_qc3)


class CompactCodec:
    """Byte accounting with compact votes and QCs; other messages keep their plain layout"""
    name = "compact"

    def __init__(self, cfg: PcConfig, resolve: Optional[Callable[[str], PcConfig]] = None):
        self.cfg = cfg
        self.resolve = resolve
        self._cache: dict = {}

    def config_for(self, instance: str) -> PcConfig:
        if self.resolve is not None:
            return self.resolve(instance)
        return self.cfg.with_instance(instance)

    def compactor(self, obj):
        if not isinstance(obj, (Vote, QuorumCertificate)):
            return obj
        cached = self._cache.get(id(obj))
        if cached is not None and cached[0] is obj:
            return cached[1]
        instance = obj.instance if isinstance(obj, Vote) else obj.votes[0].instance
        cfg = self.config_for(instance)
        compact = compact_vote(obj, cfg) if isinstance(obj, Vote) else compact_qc(obj, cfg)
        self._cache[id(obj)] = (obj, compact)
        return compact

    def encode(self, message) -> bytes:
        return encode_message(message, compactor=self.compactor)

    def size(self, message) -> int:
        return len(self.encode(message))
