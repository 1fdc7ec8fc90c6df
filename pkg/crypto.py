"""Signing, multi/aggregate signatures and hashing used by every protocol engine.

Two interchangeable backends sit behind `KeyRegistry`:

* ``ed25519`` - real asymmetric signatures from the `cryptography` package;
* ``mac``     - deterministic keyed MACs (HMAC-SHA256) where the verifier holds
  every key. Fast and reproducible, used by the simulator by default.

Aggregation is structured concatenation: one signature per signer plus a
compressed description of what each signer signed.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from errors import AggregationError, UnknownPartyError
from prefix_core import BOT, common_prefix_length

logger = logging.getLogger(__name__)

KAPPA_H = 32
HBOT = hashlib.sha256(b"prefix-consensus/H(bot)").digest()


class MessageKind(IntEnum):
    VOTE_1 = 1
    VOTE_2 = 2
    VOTE_3 = 3
    VOTE_4 = 4
    NEW_VIEW = 5
    EMPTY_VIEW = 6
    NEW_COMMIT = 7
    PROPOSAL = 8


@dataclass(frozen=True)
class DomainTag:
    kind: MessageKind
    instance: str

    def encode(self) -> bytes:
        raw = self.instance.encode("utf-8")
        return struct.pack("!BH", int(self.kind), len(raw)) + raw


@dataclass(frozen=True)
class Signature:
    signer: int
    blob: bytes


def vector_bytes(vec: Sequence) -> bytes:
    """Canonical byte string of a vector of values for signing and hashing"""
    parts = [struct.pack("!I", len(vec))]
    for elem in vec:
        if elem is BOT:
            parts.append(b"\xff\xff\xff\xff")
        else:
            parts.append(struct.pack("!I", len(elem)))
            parts.append(elem)
    return b"".join(parts)


def digest(obj) -> bytes:
    """Deterministic hash; digest(BOT) is the distinguished HBOT"""
    if obj is BOT:
        return HBOT
    if isinstance(obj, (bytes, bytearray)):
        data = bytes(obj)
    elif isinstance(obj, tuple):
        data = vector_bytes(obj)
    else:
        data = obj.canonical_bytes()
    return hashlib.sha256(b"\x01" + data).digest()


def _seed_bytes(label: bytes, seed: int, party: int) -> bytes:
    return hashlib.sha256(label + struct.pack("!QI", seed & 0xFFFFFFFFFFFFFFFF, party)).digest()


class KeyRegistry:
    """Key material for parties 0..n-1 plus the verification side of the backend."""

    def __init__(self, n: int, backend: str = "mac", seed: int = 0):
        if backend not in ("mac", "ed25519"):
            raise ValueError(f"unknown crypto backend: {backend}")
        self.n = n
        self.backend = backend
        self.seed = seed
        self.kappa_h = KAPPA_H
        if backend == "mac":
            self.kappa_s = 32
            self._mac_keys = {i: _seed_bytes(b"mac-key", seed, i) for i in range(n)}
        else:
            self.kappa_s = 64
            self._private = {
                i: Ed25519PrivateKey.from_private_bytes(_seed_bytes(b"ed25519-key", seed, i))
                for i in range(n)
            }
            self._public: dict[int, Ed25519PublicKey] = {i: k.public_key() for i, k in self._private.items()}

    def _check_party(self, party: int):
        if not isinstance(party, int) or not 0 <= party < self.n:
            raise UnknownPartyError(party)

    def sign(self, party: int, tag: DomainTag, msg: bytes) -> Signature:
        self._check_party(party)
        payload = tag.encode() + msg
        if self.backend == "mac":
            mac = hmac.HMAC(self._mac_keys[party], hashes.SHA256())
            mac.update(payload)
            return Signature(party, mac.finalize())
        return Signature(party, self._private[party].sign(payload))

    def verify(self, party: int, tag: DomainTag, msg: bytes, sig: Signature) -> bool:
        if not isinstance(sig, Signature) or sig.signer != party:
            return False
        if not isinstance(party, int) or not 0 <= party < self.n:
            return False
        if len(sig.blob) != self.kappa_s:
            return False
        payload = tag.encode() + msg
        if self.backend == "mac":
            mac = hmac.HMAC(self._mac_keys[party], hashes.SHA256())
            mac.update(payload)
            try:
                mac.verify(sig.blob)
            except InvalidSignature:
                return False
            return True
        try:
            self._public[party].verify(sig.blob, payload)
        except InvalidSignature:
            return False
        return True

    def sign_vector(self, party: int, tag: DomainTag, vec: Sequence) -> Signature:
        return self.sign(party, tag, vector_bytes(vec))

    def verify_vector(self, party: int, tag: DomainTag, vec: Sequence, sig: Signature) -> bool:
        return self.verify(party, tag, vector_bytes(vec), sig)

    def signer(self, party: int) -> "PartySigner":
        self._check_party(party)
        return PartySigner(self, party)


class PartySigner:
    """Signing capability for one party; adversaries only ever get these for Byzantine parties."""

    def __init__(self, registry: KeyRegistry, party: int):
        self._registry = registry
        self.party = party

    def sign(self, tag: DomainTag, msg: bytes) -> Signature:
        return self._registry.sign(self.party, tag, msg)

    def sign_vector(self, tag: DomainTag, vec: Sequence) -> Signature:
        return self._registry.sign_vector(self.party, tag, vec)


@dataclass(frozen=True)
class MessageDescriptor:
    """Signer's message = reference[:length] + tail"""
    signer: int
    length: int
    tail: tuple = ()


@dataclass(frozen=True)
class AggregateSignature:
    tag: DomainTag
    reference: tuple
    descriptors: tuple
    blob: bytes

    @property
    def signers(self) -> tuple:
        return tuple(d.signer for d in self.descriptors)

    def message_of(self, descriptor: MessageDescriptor) -> tuple:
        return tuple(self.reference[:descriptor.length]) + tuple(descriptor.tail)

    def messages(self) -> dict:
        return {d.signer: self.message_of(d) for d in self.descriptors}


def describe_against(reference: Sequence, signer: int, message: Sequence) -> MessageDescriptor:
    shared = common_prefix_length(reference, message)
    return MessageDescriptor(signer, shared, tuple(message[shared:]))


def aggregate(registry: KeyRegistry, tag: DomainTag, entries: Iterable,
              reference: Optional[Sequence] = None) -> AggregateSignature:
    """Aggregate (party, vector, Signature) entries.

    Messages are stored relative to `reference` (default: the longest message),
    so identical messages cost one stored vector and messages that differ only
    in their last slot cost one element each.
    """
    items = sorted(entries, key=lambda e: e[0])
    seen = set()
    for party, message, sig in items:
        if party in seen:
            raise AggregationError(f"duplicate signer {party}")
        seen.add(party)
        if not registry.verify_vector(party, tag, message, sig):
            raise AggregationError(f"invalid signature from party {party}")
    if reference is None:
        reference = max((tuple(m) for _, m, _ in items), key=len, default=())
    reference = tuple(reference)
    descriptors = tuple(describe_against(reference, party, tuple(message)) for party, message, _ in items)
    blob = b"".join(sig.blob for _, _, sig in items)
    return AggregateSignature(tag, reference, descriptors, blob)


def verify_aggregate(registry: KeyRegistry, agg: AggregateSignature) -> bool:
    if not isinstance(agg, AggregateSignature):
        return False
    signers = agg.signers
    if list(signers) != sorted(set(signers)):
        return False
    if len(agg.blob) != registry.kappa_s * len(signers):
        return False
    for i, descriptor in enumerate(agg.descriptors):
        if descriptor.length < 0 or descriptor.length > len(agg.reference):
            return False
        chunk = agg.blob[i * registry.kappa_s:(i + 1) * registry.kappa_s]
        sig = Signature(descriptor.signer, chunk)
        if not registry.verify_vector(descriptor.signer, agg.tag, agg.message_of(descriptor), sig):
            return False
    return True
