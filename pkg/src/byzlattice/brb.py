"""Bracha reliable broadcast with a validity gate on the echo step.

One ``BrbEngine`` per process handles every broadcast instance, keyed by
(origin, kind, round). Quorums are counted per payload digest so that two
payloads that differ anywhere, including the proof, never pool their votes.
"""
from __future__ import annotations

from enum import Enum
from typing import Callable, Optional

from .messages import ALL, BrbPayload, Echo, Init, Ready

Emission = tuple  # (destination, message)


class Verdict(Enum):
    VALID = "valid"
    PENDING = "pending"  # inputs still missing; re-evaluated as state grows
    INVALID = "invalid"  # can never become valid at this process


Validity = Callable[[BrbPayload], Verdict]


def echo_quorum(n: int, f: int) -> int:
    return (n + f) // 2 + 1


class DuplicateBroadcast(RuntimeError):
    pass


class BrbInstance:
    __slots__ = ("first_init", "parked", "echoed", "readied", "delivered", "echoes", "readies", "rejected")

    def __init__(self) -> None:
        self.first_init: Optional[BrbPayload] = None
        self.parked: Optional[BrbPayload] = None
        self.echoed = False
        self.readied = False
        self.delivered: Optional[BrbPayload] = None
        self.echoes: dict[bytes, set] = {}
        self.readies: dict[bytes, set] = {}
        self.rejected = False

    def clone(self) -> BrbInstance:
        c = BrbInstance()
        c.first_init = self.first_init
        c.parked = self.parked
        c.echoed = self.echoed
        c.readied = self.readied
        c.delivered = self.delivered
        c.echoes = {k: set(v) for k, v in self.echoes.items()}
        c.readies = {k: set(v) for k, v in self.readies.items()}
        c.rejected = self.rejected
        return c

    def state_key(self) -> tuple:
        """Hashable summary used by the schedule enumerator."""
        d = lambda p: None if p is None else p.digest  # noqa: E731
        return (
            d(self.first_init),
            d(self.parked),
            self.echoed,
            self.readied,
            d(self.delivered),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.echoes.items())),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.readies.items())),
        )


class BrbEngine:
    def __init__(
        self,
        pid: int,
        n: int,
        f: int,
        validity: Validity,
        deliver_threshold: Optional[int] = None,
        on_echo: Optional[Callable[[BrbPayload], None]] = None,
    ):
        self.pid = pid
        self.n = n
        self.f = f
        self.validity = validity
        self.echo_q = echo_quorum(n, f)
        self.amplify_q = f + 1
        self.deliver_q = 2 * f + 1 if deliver_threshold is None else deliver_threshold
        self.instances: dict[tuple, BrbInstance] = {}
        self._parked: dict[tuple, BrbInstance] = {}
        self._sent: set = set()
        self.on_echo = on_echo

    def _inst(self, key: tuple) -> BrbInstance:
        inst = self.instances.get(key)
        if inst is None:
            inst = self.instances[key] = BrbInstance()
        return inst

    def broadcast(self, payload: BrbPayload) -> list[Emission]:
        if payload.origin != self.pid:
            raise ValueError("only the origin may broadcast its payload")
        key = payload.key
        if key in self._sent:
            raise DuplicateBroadcast(f"{key} already broadcast")
        self._sent.add(key)
        return [(ALL, Init(payload))]

    def _echo(self, inst: BrbInstance, payload: BrbPayload) -> list[Emission]:
        inst.echoed = True
        if self.on_echo is not None:
            self.on_echo(payload)
        return [(ALL, Echo(payload))]

    def on_init(self, src: int, payload: BrbPayload) -> list[Emission]:
        if src != payload.origin:
            return []
        inst = self._inst(payload.key)
        if inst.first_init is not None:
            return []
        inst.first_init = payload
        verdict = self.validity(payload)
        if verdict is Verdict.VALID:
            return self._echo(inst, payload)
        if verdict is Verdict.PENDING:
            inst.parked = payload
            self._parked[payload.key] = inst
        else:
            inst.rejected = True
        return []

    def on_echo_msg(self, src: int, payload: BrbPayload) -> list[Emission]:
        inst = self._inst(payload.key)
        if inst.readied:
            return []  # an echo can only trigger our READY
        d = payload.digest
        senders = inst.echoes.get(d)
        if senders is None:
            senders = inst.echoes[d] = set()
        senders.add(src)
        if len(senders) >= self.echo_q and not inst.readied:
            inst.readied = True
            return [(ALL, Ready(payload))]
        return []

    def on_ready_msg(self, src: int, payload: BrbPayload) -> tuple[list[Emission], Optional[BrbPayload]]:
        inst = self._inst(payload.key)
        if inst.readied and inst.delivered is not None:
            return [], None
        d = payload.digest
        senders = inst.readies.get(d)
        if senders is None:
            senders = inst.readies[d] = set()
        senders.add(src)
        out: list[Emission] = []
        count = len(senders)
        if count >= self.amplify_q and not inst.readied:
            inst.readied = True
            out.append((ALL, Ready(payload)))
        if count >= self.deliver_q and inst.delivered is None:
            inst.delivered = payload
            return out, payload
        return out, None

    def recheck_pending(self) -> list[Emission]:
        if not self._parked:
            return []
        out: list[Emission] = []
        for key, inst in list(self._parked.items()):
            payload = inst.parked
            verdict = self.validity(payload)
            if verdict is Verdict.PENDING:
                continue
            del self._parked[key]
            inst.parked = None
            if verdict is Verdict.VALID:
                out.extend(self._echo(inst, payload))
            else:
                inst.rejected = True
        return out

    def clone(self) -> BrbEngine:
        """Independent copy of the protocol state (validity and callbacks are shared)."""
        c = BrbEngine.__new__(BrbEngine)
        c.__dict__.update(self.__dict__)
        c.instances = {k: inst.clone() for k, inst in self.instances.items()}
        c._parked = {k: c.instances[k] for k in self._parked}
        c._sent = set(self._sent)
        return c

    def state_key(self) -> tuple:
        return tuple(sorted((k, inst.state_key()) for k, inst in self.instances.items()))

    def delivered(self, key: tuple) -> Optional[BrbPayload]:
        inst = self.instances.get(key)
        return None if inst is None else inst.delivered

    @property
    def parked_count(self) -> int:
        return len(self._parked)
