"""Authenticated classifier: signed acks replace the reliably broadcast read.

The signature scheme is an in-simulation oracle. Only the registry can mint
``SigningKey`` objects and ``sign`` refuses any key it did not issue, so a
strategy holding keys for the Byzantine pids cannot sign for anyone else.
"""
from __future__ import annotations

import hashlib
import hmac
from typing import Any

from .brb import Verdict
from .classifier import Classifier, RoundState
from .lattice import Label
from .messages import ALL, AuthRead, BrbPayload, Master, Mack, SignedAck, Wack, signing_bytes


class ForgeryError(PermissionError):
    pass


class SigningKey:
    __slots__ = ("pid", "_secret")

    def __init__(self, pid: int, secret: bytes):
        self.pid = pid
        self._secret = secret

    def __repr__(self) -> str:
        return f"SigningKey(pid={self.pid})"


class SignatureRegistry:
    """Append-only record of every legitimate signing call."""

    def __init__(self, seed: int | str = 0):
        self._seed = str(seed).encode()
        self._keys: dict[int, SigningKey] = {}
        self._signed: dict[tuple[int, bytes], bytes] = {}

    def key_for(self, pid: int) -> SigningKey:
        key = self._keys.get(pid)
        if key is None:
            secret = hashlib.sha256(b"key|" + self._seed + b"|" + str(pid).encode()).digest()
            key = self._keys[pid] = SigningKey(pid, secret)
        return key

    def sign(self, key: SigningKey, data: bytes) -> bytes:
        if self._keys.get(key.pid) is not key:
            raise ForgeryError(f"key for pid {key.pid} was not issued by this registry")
        tag = hmac.new(key._secret, data, hashlib.sha256).digest()[:16]
        self._signed[(key.pid, hashlib.sha256(data).digest())] = tag
        return tag

    def verify(self, pid: int, data: bytes, tag: bytes) -> bool:
        if not isinstance(tag, bytes):
            return False
        expected = self._signed.get((pid, hashlib.sha256(data).digest()))
        return expected is not None and hmac.compare_digest(expected, tag)

    def was_signed(self, pid: int, data: bytes) -> bool:
        return (pid, hashlib.sha256(data).digest()) in self._signed

    def make_ack(self, key: SigningKey, kind: str, payload: frozenset, r: int, k: Label) -> SignedAck:
        tag = self.sign(key, signing_bytes(kind, payload, r, k))
        return SignedAck(kind, payload, r, k, key.pid, tag)

    def verify_ack(self, ack: SignedAck) -> bool:
        cache = ack.__dict__
        ok = cache.get("_sig_ok")
        if ok is None:
            ok = cache["_sig_ok"] = self.verify(ack.signer, ack.signed_bytes, ack.tag)
        return ok

    def dump(self) -> list[dict]:
        return [
            {"signer": pid, "data_sha256": h.hex(), "tag": tag.hex()}
            for (pid, h), tag in sorted(self._signed.items())
        ]

    def __len__(self) -> int:
        return len(self._signed)


def distinct_signers(registry: SignatureRegistry, acks: Any, kind: str, r: int) -> set[int]:
    if not isinstance(acks, frozenset):
        return set()
    return {
        a.signer
        for a in acks
        if isinstance(a, SignedAck) and a.kind == kind and a.r == r and registry.verify_ack(a)
    }


def valid_signature(registry: SignatureRegistry, kind: str, pf: Any, r: int, quorum: int) -> bool:
    """Write proofs need signed racks of round r-1; read proofs signed wacks of round r."""
    if kind == "write":
        return len(distinct_signers(registry, pf, "rack", r - 1)) >= quorum
    if kind == "read":
        return len(distinct_signers(registry, pf, "wack", r)) >= quorum
    return False


class AuthClassifier(Classifier):
    def __init__(self, proc):
        super().__init__(proc)
        self.registry: SignatureRegistry = proc.registry
        self.key: SigningKey = proc.key

    def empty_proof(self) -> Any:
        return frozenset()

    def make_proof(self, rs: RoundState) -> Any:
        return frozenset(rs.RV.values())

    def rack_values(self, ack: Any) -> frozenset:
        return ack.payload

    def write_ack(self, rs: RoundState, origin: int, k: Label) -> list:
        ack = self.registry.make_ack(self.key, "wack", rs.acv(k).snapshot(), rs.r, k)
        return [(origin, ack)]

    def start_read(self, rs: RoundState) -> list:
        W = frozenset(list(rs.wacks.values())[: self.quorum])
        self.p.log("read_start", rs.r, rs.k, W=W)
        out = [(ALL, AuthRead(W, rs.k, rs.r))]
        out += self._scan_racks(rs)
        return out

    def on_deliver(self, payload: BrbPayload) -> list:
        if payload.kind == "write":
            return self.on_deliver_write(payload)
        return []

    def on_message(self, src: int, msg: Any) -> list:
        t = type(msg)
        if t is SignedAck:
            if msg.signer != src or not self.registry.verify_ack(msg):
                return self.p.drop(src, msg, "bad signature")
            rs = self.round(msg.r)
            self.p.log("ack_accepted", msg.r, msg.k, ack=msg)
            if msg.kind == "wack":
                if src not in rs.wacks:
                    rs.wacks[src] = msg
                return self._check_wacks(rs)
            if src in rs.racks:
                return []
            rs.racks[src] = msg
            return self._scan_racks(rs)
        if t is AuthRead:
            return self.on_read(src, msg)
        if t is Master:
            return self.on_master(src, msg)
        if t is Mack:
            rs = self.round(msg.r)
            if src in rs.macks:
                return []
            rs.macks[src] = msg.values
            return self._scan_macks(rs)
        if t is Wack:
            return self.p.drop(src, msg, "unsigned wack")
        return self.p.drop(src, msg, "unexpected message type")

    def on_read(self, src: int, msg: AuthRead) -> list:
        rs = self.round(msg.r)
        if src in rs.answered_reads:
            return []
        gated = "read-gate-off" not in self.mutations
        if gated and not valid_signature(self.registry, "read", msg.acks, msg.r, self.quorum):
            return self.p.drop(src, msg, "read without write proof")
        rs.answered_reads.add(src)
        snap = rs.acv(msg.k).snapshot()
        ack = self.registry.make_ack(self.key, "rack", snap, msg.r, msg.k)
        self.p.log("rack_sent", msg.r, msg.k, to=src, R=snap)
        return [(src, ack)]

    def valid_read(self, payload: BrbPayload) -> Verdict:
        return Verdict.INVALID

    def valid_slave_proof(self, payload: BrbPayload, prev: RoundState) -> Verdict:
        pf = payload.pf
        if not valid_signature(self.registry, "write", pf, payload.r, self.quorum):
            return Verdict.INVALID
        lb = prev.LB[payload.origin]
        values = frozenset().union(*(a.payload for a in pf))
        return Verdict.VALID if 2 * len(values) <= lb.x2 else Verdict.INVALID
