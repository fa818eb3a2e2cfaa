"""Wire messages and their canonical byte encoding.

Every message is immutable. Content identity (quorum counting, signatures,
trace digests) goes through ``encode``: type-tagged, length-prefixed, with
set members sorted by their own encoding.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Any, ClassVar

from .lattice import Label, TaggedValue

ALL = 0  # broadcast destination

_U32 = struct.Struct(">I")


def _frame(tag: bytes, body: bytes) -> bytes:
    return tag + _U32.pack(len(body)) + body


@lru_cache(maxsize=1 << 16)
def _encode_set(s: frozenset) -> bytes:
    parts = sorted(encode(x) for x in s)
    return _frame(b"S", b"".join(parts))


def clear_caches() -> None:
    """Drop encodings cached during a trial; entries can hold whole proofs."""
    _encode_set.cache_clear()


def encode(obj: Any) -> bytes:
    if obj is None:
        return b"N"
    if isinstance(obj, bool):
        return b"B1" if obj else b"B0"
    if isinstance(obj, int):
        return _frame(b"i", str(obj).encode())
    if isinstance(obj, bytes):
        return _frame(b"b", obj)
    if isinstance(obj, str):
        return _frame(b"s", obj.encode())
    if isinstance(obj, Label):
        return _frame(b"l", str(obj.x2).encode())
    if isinstance(obj, TaggedValue):
        return _frame(b"v", encode(obj.origin) + encode(obj.element))
    if isinstance(obj, frozenset):
        return _encode_set(obj)
    if isinstance(obj, (set, list, tuple)) and not hasattr(obj, "canonical"):
        if isinstance(obj, set):
            return _encode_set(frozenset(obj))
        return _frame(b"T", b"".join(encode(x) for x in obj))
    canonical = getattr(obj, "canonical", None)
    if canonical is not None:
        return canonical
    raise TypeError(f"no canonical encoding for {type(obj).__name__}")


def digest(obj: Any) -> bytes:
    return hashlib.sha256(encode(obj)).digest()[:16]


class Message:
    mtype: ClassVar[str] = "?"

    @cached_property
    def canonical(self) -> bytes:
        return _frame(self.mtype.encode(), b"".join(encode(getattr(self, f)) for f in self._fields))

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical).digest()[:16]

    @property
    def label_x2(self) -> int:
        k = getattr(self, "k", None)
        return k.x2 if isinstance(k, Label) else -1


@dataclass(frozen=True, eq=False)
class BrbPayload(Message):
    """The (origin, type, pf, v, k, r) tuple carried by all three BRB phases."""

    origin: int
    kind: str  # "input" | "write" | "read"
    pf: Any  # tuple of n value sets (unauth) or frozenset of SignedAck (auth); empty when absent
    v: frozenset
    k: Label
    r: int

    mtype: ClassVar[str] = "payload"
    _fields: ClassVar[tuple] = ("origin", "kind", "pf", "v", "k", "r")

    @property
    def key(self) -> tuple:
        return (self.origin, self.kind, self.r)


class _Wrapper(Message):
    # the payload is already content-addressed; hashing its digest avoids
    # re-hashing a large proof for every INIT/ECHO/READY object
    @cached_property
    def canonical(self) -> bytes:
        return _frame(self.mtype.encode(), _frame(b"D", self.payload.digest))


@dataclass(frozen=True, eq=False)
class Init(_Wrapper):
    payload: BrbPayload
    mtype: ClassVar[str] = "INIT"
    _fields: ClassVar[tuple] = ("payload",)


@dataclass(frozen=True, eq=False)
class Echo(_Wrapper):
    payload: BrbPayload
    mtype: ClassVar[str] = "ECHO"
    _fields: ClassVar[tuple] = ("payload",)


@dataclass(frozen=True, eq=False)
class Ready(_Wrapper):
    payload: BrbPayload
    mtype: ClassVar[str] = "READY"
    _fields: ClassVar[tuple] = ("payload",)


@dataclass(frozen=True, eq=False)
class Wack(Message):
    r: int
    mtype: ClassVar[str] = "wack"
    _fields: ClassVar[tuple] = ("r",)


@dataclass(frozen=True, eq=False)
class Rack(Message):
    values: frozenset
    r: int
    mtype: ClassVar[str] = "rack"
    _fields: ClassVar[tuple] = ("values", "r")


@dataclass(frozen=True, eq=False)
class Master(Message):
    values: frozenset
    k: Label
    r: int
    mtype: ClassVar[str] = "master"
    _fields: ClassVar[tuple] = ("values", "k", "r")


@dataclass(frozen=True, eq=False)
class Mack(Message):
    values: frozenset
    r: int
    mtype: ClassVar[str] = "mack"
    _fields: ClassVar[tuple] = ("values", "r")


@dataclass(frozen=True, eq=False)
class SignedAck(Message):
    """``<kind(payload, r)>_signer``; also travels bare as a wack/rack reply."""

    kind: str  # "wack" | "rack"
    payload: frozenset
    r: int
    k: Label
    signer: int
    tag: bytes

    mtype: ClassVar[str] = "signed"
    _fields: ClassVar[tuple] = ("kind", "payload", "r", "k", "signer", "tag")

    @cached_property
    def signed_bytes(self) -> bytes:
        return signing_bytes(self.kind, self.payload, self.r, self.k)


def signing_bytes(kind: str, payload: frozenset, r: int, k: Label) -> bytes:
    return _frame(b"ack", encode(kind) + encode(r) + encode(k) + encode(payload))


@dataclass(frozen=True, eq=False)
class AuthRead(Message):
    acks: frozenset  # of SignedAck wacks
    k: Label
    r: int
    mtype: ClassVar[str] = "read"
    _fields: ClassVar[tuple] = ("acks", "k", "r")


BRB_KINDS = ("input", "write", "read")


def _is_vs(x: Any, n: int) -> bool:
    if not isinstance(x, frozenset):
        return False
    for tv in x:
        if not isinstance(tv, TaggedValue) or type(tv.origin) is not int or not 1 <= tv.origin <= n:
            return False
    return True


def _is_round(r: Any) -> bool:
    return type(r) is int and r >= 0


def _is_ack(a: Any, n: int) -> bool:
    return (
        isinstance(a, SignedAck)
        and a.kind in ("wack", "rack")
        and _is_vs(a.payload, n)
        and _is_round(a.r)
        and isinstance(a.k, Label)
        and type(a.signer) is int
        and isinstance(a.tag, bytes)
    )


def _check(msg: Any, n: int) -> bool:
    if isinstance(msg, (Init, Echo, Ready)):
        p = msg.payload
        if not isinstance(p, BrbPayload):
            return False
        if p.kind not in BRB_KINDS or type(p.origin) is not int or not 1 <= p.origin <= n:
            return False
        if not (_is_round(p.r) and isinstance(p.k, Label) and _is_vs(p.v, n)):
            return False
        pf = p.pf
        if isinstance(pf, tuple):
            return len(pf) in (0, n) and all(_is_vs(x, n) for x in pf)
        if isinstance(pf, frozenset):
            return all(_is_ack(a, n) for a in pf)
        return False
    if isinstance(msg, Wack):
        return _is_round(msg.r)
    if isinstance(msg, (Rack, Mack)):
        return _is_round(msg.r) and _is_vs(msg.values, n)
    if isinstance(msg, Master):
        return _is_round(msg.r) and isinstance(msg.k, Label) and _is_vs(msg.values, n)
    if isinstance(msg, SignedAck):
        return _is_ack(msg, n)
    if isinstance(msg, AuthRead):
        return (
            _is_round(msg.r)
            and isinstance(msg.k, Label)
            and isinstance(msg.acks, frozenset)
            and all(_is_ack(a, n) for a in msg.acks)
        )
    return False


def well_formed(msg: Any, n: int) -> bool:
    """Structural check of an inbound message; cached on the message object."""
    if not isinstance(msg, Message):
        return False
    cache = msg.__dict__
    ok = cache.get("_wf")
    if ok is None:
        try:
            ok = _check(msg, n)
        except Exception:  # hostile objects may raise from __eq__/__hash__
            ok = False
        cache["_wf"] = ok
    return ok


def message_digest(msg: Any) -> bytes:
    if isinstance(msg, Message):
        try:
            return msg.digest
        except TypeError:
            pass
    if isinstance(msg, bytes):
        return hashlib.sha256(msg).digest()[:16]
    return hashlib.sha256(repr(msg).encode()).digest()[:16]


def message_round(msg: Any) -> int:
    if isinstance(msg, (Init, Echo, Ready)):
        return getattr(msg.payload, "r", -1)
    r = getattr(msg, "r", -1)
    return r if type(r) is int else -1


def message_mtype(msg: Any) -> str:
    if isinstance(msg, (Init, Echo, Ready)):
        return f"{msg.mtype}:{getattr(msg.payload, 'kind', '?')}"
    if isinstance(msg, SignedAck):
        return f"signed:{msg.kind}"
    if isinstance(msg, Message):
        return msg.mtype
    return "garbage"
