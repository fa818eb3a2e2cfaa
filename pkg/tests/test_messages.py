from hypothesis import given
from hypothesis import strategies as st

from byzlattice.lattice import Label, TaggedValue
from byzlattice.messages import (
    BrbPayload,
    Echo,
    Init,
    Mack,
    Rack,
    Ready,
    SignedAck,
    Wack,
    digest,
    encode,
    message_mtype,
    message_round,
    well_formed,
)

values = st.frozensets(
    st.builds(TaggedValue, st.integers(1, 6), st.frozensets(st.binary(max_size=3), max_size=3)), max_size=5
)


@given(values)
def test_encoding_ignores_construction_order(vs):
    rebuilt = frozenset(reversed(list(vs)))
    assert encode(vs) == encode(rebuilt)
    assert digest(vs) == digest(rebuilt)


@given(values, values)
def test_distinct_sets_encode_differently(a, b):
    if a != b:
        assert encode(a) != encode(b)


def test_payload_identity_covers_every_field():
    v = frozenset({TaggedValue(1, frozenset({b"a"}))})
    base = BrbPayload(1, "write", (), v, Label(10), 1)
    variants = [
        BrbPayload(2, "write", (), v, Label(10), 1),
        BrbPayload(1, "read", (), v, Label(10), 1),
        BrbPayload(1, "write", (v,) * 6, v, Label(10), 1),
        BrbPayload(1, "write", (), frozenset(), Label(10), 1),
        BrbPayload(1, "write", (), v, Label(12), 1),
        BrbPayload(1, "write", (), v, Label(10), 2),
    ]
    assert len({base.digest} | {p.digest for p in variants}) == 7
    assert base.digest == BrbPayload(1, "write", (), v, Label(10), 1).digest
    # the three BRB phases carry the same payload but are distinct messages
    assert len({Init(base).digest, Echo(base).digest, Ready(base).digest}) == 3


def test_well_formed():
    v = frozenset({TaggedValue(1, frozenset({b"a"}))})
    ok = BrbPayload(1, "write", (), v, Label(10), 1)
    assert well_formed(Init(ok), 6)
    assert not well_formed(Init(BrbPayload(9, "write", (), v, Label(10), 1)), 6)
    assert not well_formed(Init(BrbPayload(1, "bogus", (), v, Label(10), 1)), 6)
    assert not well_formed(Init(BrbPayload(1, "write", (v,), v, Label(10), 1)), 6)
    assert not well_formed(Rack(frozenset({"junk"}), 1), 6)
    assert not well_formed(Wack(-1), 6)
    assert not well_formed("garbage", 6)
    assert well_formed(Mack(v, 2), 6)
    ack = SignedAck("rack", v, 1, Label(10), 2, b"t" * 16)
    assert well_formed(ack, 6)
    assert not well_formed(SignedAck("nope", v, 1, Label(10), 2, b"t"), 6)


def test_trace_helpers():
    v = frozenset()
    p = BrbPayload(1, "read", (), v, Label(10), 3)
    assert message_mtype(Echo(p)) == "ECHO:read"
    assert message_round(Echo(p)) == 3
    assert message_mtype(object()) == "garbage"
