from dataclasses import replace

import pytest

from crypto import KeyRegistry, MessageDescriptor
from errors import DecodeError, EncodeError
from pc_protocols import PcConfig, Variant
from prefix_core import BOT
from suites import tampered_certificates
from tests.helpers import hand_built_certificates, pc_run
from wire_compact import (CompactCodec, CompactQC1, CompactQC2, CompactVote, DivergenceWitness, PaddedVector, SignedSet,
                          compact_qc, compact_qc1, compact_qc2, equivalence_harness, verify_compact)
from wire_format import HEADER_LEN, Writer, decode_message, describe, encode_message, hexdump, unframe


def mixed_inputs(n=4, common=2, L=3):
    return {p: tuple(f"e{k}".encode() for k in range(common)) + tuple(f"p{p}".encode() for _ in range(L - common))
            for p in range(n)}


@pytest.fixture(scope="module")
def signed_run():
    """Three-round run with prefix signatures and diverging last entries"""
    return pc_run(n=4, f=1, L=3, inputs=mixed_inputs(), prefix_signatures=True)


def test_plain_vote_decodes_to_itself(signed_run):
    engine = signed_run.engines[0]
    vote = engine.qcs[3].votes[0]
    frame = encode_message(vote)
    assert frame[:2] == b"PX"
    assert decode_message(frame) == vote


def test_truncated_frames_name_the_failing_field(signed_run):
    vote = signed_run.engines[1].qcs[2].votes[0]
    frame = encode_message(vote)
    with pytest.raises(DecodeError) as e:
        decode_message(frame[:HEADER_LEN - 1])
    assert e.value.field == "header"
    with pytest.raises(DecodeError) as e:
        decode_message(frame[:-3])
    assert e.value.field == "header.body_len"
    assert unframe(frame)[1] == 0x01
    bad_magic = b"QX" + frame[2:]
    with pytest.raises(DecodeError):
        decode_message(bad_magic)


def test_describe_and_hexdump(signed_run):
    vote = signed_run.engines[2].qcs[1].votes[0]
    frame = encode_message(vote)
    info = describe(frame)
    assert info["codec"] == "plain"
    assert info["kind"] == "vote"
    assert info["tag"] == "0x01"
    assert info["body_len"] == len(frame) - HEADER_LEN
    assert info["message"] == vote
    dump = hexdump(frame)
    assert dump.splitlines()[0].startswith("00000000  50 58 01 00 01")


def test_values_must_be_bytes():
    with pytest.raises(EncodeError):
        Writer().value("text")


def test_padded_vector_hides_padding():
    pv = PaddedVector.pad((b"a",), 3)
    assert pv.elems == (b"a", BOT, BOT)
    assert pv.unpad() == (b"a",)
    with pytest.raises(EncodeError):
        PaddedVector.pad((b"a", b"b"), 1)


@pytest.mark.parametrize("elems", [(b"ab", b"cd"), (b"e0", b"p1e2"), ()])
def test_padded_vector_frames(elems):
    pv = PaddedVector.pad(elems, 4)
    assert decode_message(encode_message(pv)) == pv


def test_compact_vote_frame_decodes(signed_run):
    engine = signed_run.engines[0]
    codec = CompactCodec(engine.cfg)
    vote = engine.qcs[2].votes[0]
    decoded = decode_message(codec.encode(vote))
    assert isinstance(decoded, CompactVote)
    assert decoded.value.unpad() == vote.value
    assert describe(codec.encode(vote))["codec"] == "compact"


@pytest.mark.parametrize("round_", [1, 2, 3])
def test_compact_certificates_certify_what_plain_ones_do(signed_run, round_):
    for engine in signed_run.engines.values():
        registry = engine.registry
        plain, compact = equivalence_harness(engine.qcs[round_].votes, engine.cfg, registry)
        assert compact is not None
        assert plain == compact


def test_compact_certificate_rejected_under_other_keys(signed_run):
    engine = signed_run.engines[0]
    qc = compact_qc(engine.qcs[1], engine.cfg)
    assert verify_compact(qc, engine.cfg, engine.registry)
    assert not verify_compact(qc, engine.cfg, KeyRegistry(4, seed=999))
    wrong_instance = engine.cfg.with_instance("other")
    assert verify_compact(qc, wrong_instance, engine.registry).reason == "instance-mismatch"


@pytest.mark.parametrize("variant,n,f", [(Variant.THREE_ROUND, 4, 1), (Variant.OPTIMISTIC, 4, 1),
                                         (Variant.FAST_5F1, 6, 1)])
def test_compact_codec_carries_fewer_bytes(variant, n, f):
    L = 4
    cfg = PcConfig(n=n, f=f, L=L, variant=variant, prefix_signatures=True)
    inputs = mixed_inputs(n, common=2, L=L)
    plain = pc_run(n=n, f=f, L=L, variant=variant, inputs=inputs, prefix_signatures=True)
    compact = pc_run(n=n, f=f, L=L, variant=variant, inputs=inputs, prefix_signatures=True,
                     codec=CompactCodec(cfg))
    assert compact.metrics.messages == plain.metrics.messages
    assert compact.metrics.bytes < plain.metrics.bytes
    for p in range(n):
        assert compact.engines[p].result.high == plain.engines[p].result.high


@pytest.fixture(scope="module")
def hand_built():
    return hand_built_certificates()


def test_hand_built_certificates_verify(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    assert verify_compact(compact_qc1(hand_built.qc1_c, cfg), cfg, registry).value == (b"a", b"b", b"c")
    assert verify_compact(compact_qc1(hand_built.qc1_ab, cfg), cfg, registry).value == (b"a", b"b")
    mixed = compact_qc2(hand_built.qc2_mixed, cfg)
    assert [w.next for w in mixed.witnesses] == [b"c", BOT]
    assert verify_compact(mixed, cfg, registry).value == (b"a", b"b")
    assert verify_compact(compact_qc2(hand_built.qc2_full, cfg), cfg, registry).value == (b"a", b"b", b"c")
    assert verify_compact(compact_qc(hand_built.qc3, cfg), cfg, registry).value == ((b"a", b"b"), (b"a", b"b", b"c"))


def test_terminal_witness_cannot_shorten_x_p(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    votes = hand_built.qc2_full.votes
    shorter = (b"a", b"b")
    multisig = SignedSet(tuple(MessageDescriptor(v.sender, 2, ()) for v in votes),
                         b"".join(v.prefix_signatures[2].blob for v in votes))
    # every signer voted abc; the witness offers its signature on ab and a QC1 that does certify ab
    witness = DivergenceWitness(votes[0].sender, BOT, votes[0].prefix_signatures[2],
                                compact_qc1(hand_built.qc1_ab, cfg))
    forged = CompactQC2(2, cfg.instance, PaddedVector.pad(shorter, cfg.L), multisig, None, (witness,))
    assert verify_compact(forged, cfg, registry).reason == "witness-signature"
    assert verify_compact(compact_qc2(hand_built.qc2_full, cfg), cfg, registry).value == (b"a", b"b", b"c")


def test_terminal_witness_needs_the_closing_signature(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    honest = compact_qc2(hand_built.qc2_mixed, cfg)
    continuing, terminal = honest.witnesses
    opened = replace(terminal, signature=hand_built.qc2_mixed.votes[1].prefix_signatures[2])
    assert verify_compact(replace(honest, witnesses=(continuing, opened)), cfg, registry).reason == "witness-signature"


def test_qc1_cannot_claim_votes_stop_early(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    votes = hand_built.qc1_c.votes
    forged = CompactQC1(cfg.instance, PaddedVector.pad((b"a",), cfg.L),
                        SignedSet(tuple(MessageDescriptor(v.sender, 1, (BOT,)) for v in votes),
                                  b"".join(v.prefix_signatures[1].blob for v in votes)))
    assert verify_compact(forged, cfg, registry).reason == "aggregate-signature"


def test_witness_qc1_must_justify_its_signer(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    honest = compact_qc2(hand_built.qc2_mixed, cfg)
    continuing, terminal = honest.witnesses
    swapped = (replace(continuing, qc1=terminal.qc1), replace(terminal, qc1=continuing.qc1))
    assert verify_compact(replace(honest, witnesses=swapped), cfg, registry).reason == "witness-not-certified"
    missing = (replace(continuing, qc1=None), terminal)
    assert verify_compact(replace(honest, witnesses=missing), cfg, registry).reason == "witness-qc1-not-a-compact-qc1"


def test_range_sub_proofs_must_be_of_the_expected_kind(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    honest = compact_qc(hand_built.qc3, cfg)
    # a QC1 certifying ab exists, but a three-round range needs round-2 certificates
    as_qc1 = replace(honest, low_proof=compact_qc1(hand_built.qc1_ab, cfg))
    assert verify_compact(as_qc1, cfg, registry).reason == "shortest-wrong-proof-kind"
    as_round1 = replace(honest, low_proof=replace(honest.low_proof, round=1))
    assert verify_compact(as_round1, cfg, registry).reason == "shortest-wrong-proof-kind"
    assert verify_compact(replace(honest, round=2), cfg, registry).reason == "unexpected-range-round"


def test_range_member_cannot_be_cut_short(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    honest = compact_qc(hand_built.qc3, cfg)
    first = hand_built.qc3.votes[0]
    size = len(honest.members.blob) // len(honest.members.descriptors)
    descriptors = (MessageDescriptor(first.sender, 1, (BOT,)),) + honest.members.descriptors[1:]
    members = SignedSet(descriptors, first.prefix_signatures[1].blob + honest.members.blob[size:])
    forged = replace(honest, low=PaddedVector.pad((b"a",), cfg.L), members=members)
    assert verify_compact(forged, cfg, registry).reason == "aggregate-signature"
    unclosed = honest.members.descriptors
    unclosed = (replace(unclosed[0], tail=()),) + unclosed[1:]
    assert verify_compact(replace(honest, members=replace(honest.members, descriptors=unclosed)), cfg,
                          registry).reason == "member-not-prefix-of-longest"


def test_tampered_copies_of_hand_built_certificates_are_rejected(hand_built):
    cfg, registry = hand_built.cfg, hand_built.registry
    for qc in (hand_built.qc2_mixed, hand_built.qc2_full, hand_built.qc3):
        tampered = list(tampered_certificates(compact_qc(qc, cfg), qc.votes, cfg))
        assert tampered
        for name, forged in tampered:
            assert not verify_compact(forged, cfg, registry), name
    names = [name for name, _ in tampered_certificates(compact_qc(hand_built.qc2_mixed, cfg),
                                                       hand_built.qc2_mixed.votes, cfg)]
    assert names == ["witness-signatures-swapped", "witness-qc1-swapped", "terminal-witness-unclosed", "x_p-truncated"]
