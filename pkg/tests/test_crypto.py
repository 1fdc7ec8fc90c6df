import pytest

from crypto import (HBOT, DomainTag, KeyRegistry, MessageKind, aggregate, describe_against, digest,
                    verify_aggregate)
from errors import AggregationError, UnknownPartyError
from prefix_core import BOT, vector

TAG = DomainTag(MessageKind.VOTE_1, "pc")


@pytest.mark.parametrize("backend", ["mac", "ed25519"])
def test_sign_and_verify(backend):
    registry = KeyRegistry(4, backend=backend, seed=3)
    sig = registry.sign_vector(1, TAG, vector("a", "b"))
    assert registry.verify_vector(1, TAG, vector("a", "b"), sig)
    assert not registry.verify_vector(2, TAG, vector("a", "b"), sig)
    assert not registry.verify_vector(1, TAG, vector("a"), sig)
    assert not registry.verify_vector(1, DomainTag(MessageKind.VOTE_2, "pc"), vector("a", "b"), sig)


def test_keys_are_seeded():
    a = KeyRegistry(4, seed=1).sign_vector(0, TAG, vector("a"))
    b = KeyRegistry(4, seed=1).sign_vector(0, TAG, vector("a"))
    c = KeyRegistry(4, seed=2).sign_vector(0, TAG, vector("a"))
    assert a == b
    assert a != c


def test_unknown_party(registry):
    with pytest.raises(UnknownPartyError):
        registry.sign_vector(9, TAG, vector("a"))
    with pytest.raises(KeyError):
        registry.signer(-1)


def test_digest_of_bot_is_hbot():
    assert digest(BOT) == HBOT
    assert digest(b"x") != digest((b"x",))


def test_aggregate_round_trip(registry):
    messages = {0: vector("a", "b", "c"), 1: vector("a", "b"), 2: vector("a", "x")}
    entries = [(p, m, registry.sign_vector(p, TAG, m)) for p, m in messages.items()]
    agg = aggregate(registry, TAG, entries)
    assert agg.signers == (0, 1, 2)
    assert agg.messages() == messages
    assert verify_aggregate(registry, agg)


def test_aggregate_rejects_bad_entries(registry):
    sig = registry.sign_vector(0, TAG, vector("a"))
    with pytest.raises(AggregationError):
        aggregate(registry, TAG, [(0, vector("a"), sig), (0, vector("a"), sig)])
    with pytest.raises(AggregationError):
        aggregate(registry, TAG, [(0, vector("b"), sig)])


def test_descriptor_is_relative_to_reference():
    d = describe_against(vector("a", "b", "c"), 3, vector("a", "b", "z"))
    assert (d.signer, d.length, d.tail) == (3, 2, vector("z"))
