import pytest

from byzlattice.auth import ForgeryError, SignatureRegistry, SigningKey, distinct_signers, valid_signature
from byzlattice.brb import Verdict
from byzlattice.lattice import Label, TaggedValue
from byzlattice.messages import AuthRead, BrbPayload, SignedAck, Wack
from byzlattice.protocol import Process, ProcessConfig
from byzlattice.simnet import Trace

K = Label(10)


def vs(*origins):
    return frozenset(TaggedValue(o, frozenset({b"x%d" % o})) for o in origins)


def acks(reg, kind, signers, r, payload=frozenset()):
    return frozenset(reg.make_ack(reg.key_for(s), kind, payload, r, K) for s in signers)


def test_sign_and_verify():
    reg = SignatureRegistry(1)
    a = reg.make_ack(reg.key_for(2), "wack", vs(1), 1, K)
    assert reg.verify_ack(a)
    assert reg.was_signed(2, a.signed_bytes)
    # changing any signed field breaks the tag
    forged = SignedAck("wack", vs(1, 2), 1, K, 2, a.tag)
    assert not reg.verify_ack(forged)
    assert not reg.verify_ack(SignedAck("wack", vs(1), 1, K, 3, a.tag))
    assert not reg.verify(2, a.signed_bytes, "not bytes")


def test_keys_cannot_be_made_up():
    reg = SignatureRegistry(1)
    fake = SigningKey(2, b"\0" * 32)
    with pytest.raises(ForgeryError):
        reg.sign(fake, b"data")
    other = SignatureRegistry(2)
    with pytest.raises(ForgeryError):
        reg.sign(other.key_for(2), b"data")
    assert "secret" not in repr(reg.key_for(2))


def test_valid_signature_quorums():
    # n=7, f=2: quorum n-f = 5
    reg = SignatureRegistry(0)
    five = acks(reg, "rack", [1, 2, 3, 4, 5], 1)
    assert valid_signature(reg, "write", five, 2, 5)
    assert not valid_signature(reg, "write", five, 3, 5)  # stale round
    assert not valid_signature(reg, "read", five, 1, 5)  # wrong kind
    four = acks(reg, "rack", [1, 2, 3, 4], 1)
    assert not valid_signature(reg, "write", four, 2, 5)
    bad = next(iter(five))
    tampered = (five - {bad}) | {SignedAck(bad.kind, bad.payload, bad.r, bad.k, bad.signer, b"\0" * 16)}
    assert not valid_signature(reg, "write", tampered, 2, 5)
    assert not valid_signature(reg, "write", ("not", "acks"), 2, 5)


def test_duplicate_signers_count_once():
    reg = SignatureRegistry(0)
    padded = acks(reg, "wack", [1, 2, 3, 4], 1) | frozenset(
        reg.make_ack(reg.key_for(4), "wack", vs(i), 1, K) for i in range(5)
    )
    assert len(padded) == 9
    assert distinct_signers(reg, padded, "wack", 1) == {1, 2, 3, 4}
    assert not valid_signature(reg, "read", padded, 1, 5)


def make(pid=1, n=7, f=2, reg=None, **kw):
    reg = reg or SignatureRegistry(0)
    p = Process(ProcessConfig(pid, n, f, "auth", input=frozenset({b"x"}), registry=reg, **kw), Trace())
    return p, reg


def test_read_answered_only_with_write_quorum():
    p, reg = make()
    c = p.classifier
    short = AuthRead(acks(reg, "wack", [1, 2, 3, 4], 1), K, 1)
    assert c.on_message(6, short) == []
    good = AuthRead(acks(reg, "wack", [1, 2, 3, 4, 5], 1), K, 1)
    ((dst, ack),) = c.on_message(6, good)
    assert dst == 6 and ack.kind == "rack" and ack.signer == 1 and reg.verify_ack(ack)
    assert c.on_message(6, good) == []  # one answer per reader and round


def test_read_gate_off_answers_anything():
    p, reg = make(mutations={"read-gate-off"})
    out = p.classifier.on_message(6, AuthRead(frozenset(), K, 1))
    assert len(out) == 1


def test_acks_must_come_from_their_signer():
    p, reg = make()
    c = p.classifier
    a = reg.make_ack(reg.key_for(3), "wack", frozenset(), 1, K)
    assert c.on_message(4, a) == []
    assert 3 not in c.round(1).wacks and 4 not in c.round(1).wacks
    c.on_message(3, a)
    assert 3 in c.round(1).wacks
    assert c.on_message(5, Wack(1)) == []  # unsigned wacks do not count
    assert 5 not in c.round(1).wacks


def test_write_ack_is_signed_snapshot():
    p, reg = make()
    out = p.classifier.on_deliver(BrbPayload(3, "write", frozenset(), vs(3), K, 1))
    ((dst, ack),) = out
    assert dst == 3 and ack.kind == "wack" and ack.payload == vs(3) and reg.verify_ack(ack)


def test_reads_never_go_through_brb():
    p, _ = make()
    assert p.classifier.valid(BrbPayload(3, "read", (), frozenset(), K, 1)) is Verdict.INVALID


def test_slave_proof_rules():
    # n=7, f=2, k0 = 7 - 2 = 5 (x2 = 10); slave child at r=2 is 4
    p, reg = make()
    c = p.classifier
    prev = c.round(1)
    prev.LB[6] = Label(10)
    v = vs(1, 2, 3, 4, 5)
    prev.writes[6] = BrbPayload(6, "write", frozenset(), v, Label(10), 1)
    pf = acks(reg, "rack", [1, 2, 3, 4, 5], 1, vs(1, 2))
    w = BrbPayload(6, "write", pf, v, Label(8), 2)
    assert c.valid(w) is Verdict.VALID
    big = acks(reg, "rack", [1, 2, 3, 4, 5], 1, vs(1, 2, 3, 4, 5, 6))  # 12 > 10
    assert c.valid(BrbPayload(6, "write", big, v, Label(8), 2)) is Verdict.INVALID
    few = acks(reg, "rack", [1, 2, 3, 4], 1, vs(1, 2))
    assert c.valid(BrbPayload(6, "write", few, v, Label(8), 2)) is Verdict.INVALID
