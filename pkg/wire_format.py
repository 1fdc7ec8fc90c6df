"""Binary framing and the plain codec.

Frame layout (network byte order)::

    magic  "PX"   2 bytes
    version       u8   (1)
    codec         u8   (0 = plain, 1 = compact)
    tag           u8   message kind, see TAG_NAMES
    body_len      u32
    body          body_len bytes

Body fields are length-prefixed: ``str`` = u16 length + utf-8, ``value`` =
u16 length + bytes (0xFFFF marks BOT), ``vector`` = u16 count + values,
``signature`` = u16 signer + u8 size + raw bytes. Nested objects are written as
u8 tag + body. Every message kind registers its body writer/reader here.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Callable, Optional

from crypto import AggregateSignature, DomainTag, MessageDescriptor, MessageKind, Signature
from errors import DecodeError, EncodeError
from pc_protocols import QuorumCertificate, Vote
from prefix_core import BOT

logger = logging.getLogger(__name__)

MAGIC = b"PX"
VERSION = 1
CODEC_PLAIN = 0
CODEC_COMPACT = 1
_HEADER = struct.Struct("!2sBBBI")
HEADER_LEN = _HEADER.size
_BOT_LEN = 0xFFFF


class Writer:
    """Body writer; `compactor` maps plain votes and QCs to their compact forms when set"""

    def __init__(self, compactor: Optional[Callable] = None):
        self._parts: list = []
        self.compactor = compactor

    def u8(self, v: int):
        self._parts.append(struct.pack("!B", v))

    def u16(self, v: int):
        if not 0 <= v <= 0xFFFF:
            raise EncodeError(f"u16 out of range: {v}")
        self._parts.append(struct.pack("!H", v))

    def u32(self, v: int):
        self._parts.append(struct.pack("!I", v))

    def u64(self, v: int):
        self._parts.append(struct.pack("!Q", v))

    def raw(self, data: bytes):
        self._parts.append(data)

    def blob(self, data: bytes):
        self.u32(len(data))
        self.raw(data)

    def str(self, s: str):
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.raw(raw)

    def value(self, v):
        if v is BOT:
            self.u16(_BOT_LEN)
            return
        if not isinstance(v, bytes) or len(v) >= _BOT_LEN:
            raise EncodeError(f"value must be bytes shorter than {_BOT_LEN}")
        self.u16(len(v))
        self.raw(v)

    def vector(self, vec):
        self.u16(len(vec))
        for v in vec:
            self.value(v)

    def signature(self, sig: Signature):
        self.u16(sig.signer)
        self.u8(len(sig.blob))
        self.raw(sig.blob)

    def tag(self, tag: DomainTag):
        self.u8(int(tag.kind))
        self.str(tag.instance)

    def aggregate(self, agg: AggregateSignature):
        self.tag(agg.tag)
        self.vector(agg.reference)
        self.u16(len(agg.descriptors))
        for d in agg.descriptors:
            self.u16(d.signer)
            self.u16(d.length)
            self.vector(d.tail)
        self.blob(agg.blob)

    def obj(self, obj):
        if self.compactor is not None:
            obj = self.compactor(obj)
        entry = _BY_TYPE.get(type(obj))
        if entry is None:
            raise EncodeError(f"no codec registered for {type(obj).__name__}")
        self.u8(entry.tag)
        entry.write(self, obj)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, n: int, field: str) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError(field, f"need {n} bytes at offset {self._pos}, have {len(self._data) - self._pos}")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self, field: str) -> int:
        return self._take(1, field)[0]

    def u16(self, field: str) -> int:
        return struct.unpack("!H", self._take(2, field))[0]

    def u32(self, field: str) -> int:
        return struct.unpack("!I", self._take(4, field))[0]

    def u64(self, field: str) -> int:
        return struct.unpack("!Q", self._take(8, field))[0]

    def raw(self, n: int, field: str) -> bytes:
        return self._take(n, field)

    def blob(self, field: str) -> bytes:
        return self._take(self.u32(field + ".len"), field)

    def str(self, field: str) -> str:
        raw = self._take(self.u16(field + ".len"), field)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(field, "invalid utf-8") from e

    def value(self, field: str):
        length = self.u16(field + ".len")
        if length == _BOT_LEN:
            return BOT
        return self._take(length, field)

    def vector(self, field: str) -> tuple:
        count = self.u16(field + ".count")
        return tuple(self.value(f"{field}[{i}]") for i in range(count))

    def signature(self, field: str) -> Signature:
        signer = self.u16(field + ".signer")
        size = self.u8(field + ".size")
        return Signature(signer, self._take(size, field + ".blob"))

    def tag(self, field: str) -> DomainTag:
        kind = self.u8(field + ".kind")
        try:
            kind = MessageKind(kind)
        except ValueError as e:
            raise DecodeError(field + ".kind", f"unknown message kind {kind}") from e
        return DomainTag(kind, self.str(field + ".instance"))

    def aggregate(self, field: str) -> AggregateSignature:
        tag = self.tag(field + ".tag")
        reference = self.vector(field + ".reference")
        count = self.u16(field + ".descriptors")
        descriptors = []
        for i in range(count):
            signer = self.u16(f"{field}.descriptors[{i}].signer")
            length = self.u16(f"{field}.descriptors[{i}].length")
            descriptors.append(MessageDescriptor(signer, length, self.vector(f"{field}.descriptors[{i}].tail")))
        return AggregateSignature(tag, reference, tuple(descriptors), self.blob(field + ".blob"))

    def obj(self, field: str):
        tag = self.u8(field + ".tag")
        entry = _BY_TAG.get(tag)
        if entry is None:
            raise DecodeError(field + ".tag", f"unknown tag 0x{tag:02x}")
        return entry.read(self, field)

    def done(self, field: str = "body"):
        if self._pos != len(self._data):
            raise DecodeError(field, f"{len(self._data) - self._pos} trailing bytes")


@dataclass(frozen=True)
class _Codec:
    tag: int
    name: str
    cls: type
    write: Callable
    read: Callable


_BY_TYPE: dict = {}
_BY_TAG: dict = {}
TAG_NAMES: dict = {}


def register(tag: int, name: str, cls: type, write: Callable, read: Callable):
    """Register the body codec of one message kind"""
    if tag in _BY_TAG and _BY_TAG[tag].cls is not cls:
        raise ValueError(f"tag 0x{tag:02x} already registered for {_BY_TAG[tag].name}")
    entry = _Codec(tag, name, cls, write, read)
    _BY_TYPE[cls] = entry
    _BY_TAG[tag] = entry
    TAG_NAMES[tag] = name


def frame(codec: int, tag: int, body: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, codec, tag, len(body)) + body


def unframe(data: bytes) -> tuple:
    """Split a frame into (codec, tag, body)"""
    if len(data) < HEADER_LEN:
        raise DecodeError("header", f"frame shorter than {HEADER_LEN} bytes")
    magic, version, codec, tag, body_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DecodeError("header.magic", repr(magic))
    if version != VERSION:
        raise DecodeError("header.version", f"unsupported version {version}")
    body = data[HEADER_LEN:]
    if len(body) != body_len:
        raise DecodeError("header.body_len", f"declared {body_len}, found {len(body)}")
    return codec, tag, body


def encode_message(obj, compactor: Optional[Callable] = None) -> bytes:
    if compactor is not None:
        obj = compactor(obj)
    entry = _BY_TYPE.get(type(obj))
    if entry is None:
        raise EncodeError(f"no codec registered for {type(obj).__name__}")
    w = Writer(compactor)
    entry.write(w, obj)
    return frame(CODEC_PLAIN if compactor is None else CODEC_COMPACT, entry.tag, w.getvalue())


def decode_message(data: bytes):
    codec, tag, body = unframe(data)
    if codec not in (CODEC_PLAIN, CODEC_COMPACT):
        raise DecodeError("header.codec", f"unknown codec {codec}")
    entry = _BY_TAG.get(tag)
    if entry is None:
        raise DecodeError("header.tag", f"unknown tag 0x{tag:02x}")
    r = Reader(body)
    obj = entry.read(r, entry.name)
    r.done(entry.name)
    return obj


# Step 1: Prefix Consensus votes and certificates

TAG_VOTE = 0x01
TAG_QC = 0x02


def _write_vote(w: Writer, vote: Vote):
    w.str(vote.instance)
    w.u8(vote.round)
    w.u16(vote.sender)
    w.vector(vote.value)
    w.signature(vote.signature)
    w.u8(len(vote.qcs))
    for qc in vote.qcs:
        _write_qc(w, qc)
    w.u16(len(vote.prefix_signatures))
    for sig in vote.prefix_signatures:
        w.signature(sig)


def _read_vote(r: Reader, field: str) -> Vote:
    instance = r.str(field + ".instance")
    round_ = r.u8(field + ".round")
    sender = r.u16(field + ".sender")
    value = r.vector(field + ".value")
    signature = r.signature(field + ".signature")
    qcs = tuple(_read_qc(r, f"{field}.qcs[{i}]") for i in range(r.u8(field + ".qcs")))
    prefix_sigs = tuple(r.signature(f"{field}.prefix_signatures[{i}]")
                        for i in range(r.u16(field + ".prefix_signatures")))
    return Vote(round_, instance, sender, value, signature, qcs, prefix_sigs)


def _write_qc(w: Writer, qc: QuorumCertificate):
    w.u8(qc.round)
    w.u16(len(qc.votes))
    for vote in qc.votes:
        _write_vote(w, vote)


def _read_qc(r: Reader, field: str) -> QuorumCertificate:
    round_ = r.u8(field + ".round")
    count = r.u16(field + ".votes")
    return QuorumCertificate(round_, tuple(_read_vote(r, f"{field}.votes[{i}]") for i in range(count)))


register(TAG_VOTE, "vote", Vote, _write_vote, _read_vote)
register(TAG_QC, "qc", QuorumCertificate, _write_qc, _read_qc)


class PlainCodec:
    """Byte accounting with the plain representation (full vote sets inside every QC)"""
    name = "plain"

    def size(self, message) -> int:
        return len(encode_message(message))

    def encode(self, message) -> bytes:
        return encode_message(message)


def hexdump(data: bytes, width: int = 16) -> str:
    lines = []
    for offset in range(0, len(data), width):
        chunk = data[offset:offset + width]
        hex_part = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"{offset:08x}  {hex_part:<{width * 3}} {text}")
    return "\n".join(lines)


def describe(data: bytes) -> dict:
    """Header fields of a frame and its decoded message"""
    codec, tag, body = unframe(data)
    return {
        "codec": "compact" if codec == CODEC_COMPACT else "plain",
        "tag": f"0x{tag:02x}",
        "kind": TAG_NAMES.get(tag, "unknown"),
        "body_len": len(body),
        "message": decode_message(data),
    }
