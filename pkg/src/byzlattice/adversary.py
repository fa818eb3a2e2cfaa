"""Byzantine strategies.

One strategy object drives every Byzantine pid of a trial, so the faulty
processes collude through ``SharedState``. Most strategies run an honest
shadow process per Byzantine pid and rewrite what it emits; anything a
strategy wants correct processes never to accept is registered in
``SharedState.attack_payloads`` so the checkers can audit it.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .classifier import SLAVE
from .lattice import EMPTY, Label, TaggedValue, TreeParams
from .messages import ALL, AuthRead, BrbPayload, Echo, Init, Mack, Master, Rack, Ready, SignedAck, Wack
from .protocol import NullLog, Process, ProcessConfig


@dataclass
class SharedState:
    attack_payloads: set = field(default_factory=set)  # BrbPayload digests no correct process may deliver
    forged_values: set = field(default_factory=set)  # TaggedValues never reliably broadcast
    notes: dict = field(default_factory=dict)

    def attack(self, payload: BrbPayload) -> BrbPayload:
        self.attack_payloads.add(payload.digest)
        return payload


@dataclass
class AdversaryContext:
    n: int
    f: int
    byz: tuple
    correct: tuple
    variant: str
    params: TreeParams
    lattice: Any
    inputs: dict
    rng: random.Random
    shared: SharedState
    registry: Any = None
    keys: dict = field(default_factory=dict)  # SigningKey per Byzantine pid only


class Strategy:
    name = "base"
    auth_only = False

    def setup(self, ctx: AdversaryContext) -> None:
        self.ctx = ctx

    def on_start(self, pid: int) -> list:
        return []

    def on_inbound(self, pid: int, src: int, msg: Any) -> list:
        return []

    def on_tick(self, pid: int) -> list:
        return []


class Silent(Strategy):
    name = "silent"


class ShadowStrategy(Strategy):
    """Runs an honest process per Byzantine pid and rewrites its output."""

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        self.shadows: dict[int, Process] = {}
        for pid in ctx.byz:
            cfg = ProcessConfig(pid, ctx.n, ctx.f, ctx.variant, ctx.lattice, ctx.inputs[pid], registry=ctx.registry, tree_rule=ctx.params.rule)
            self.shadows[pid] = Process(cfg, NullLog())

    def on_start(self, pid: int) -> list:
        return self.rewrite(pid, self.shadows[pid].start())

    def on_inbound(self, pid: int, src: int, msg: Any) -> list:
        out = self.rewrite(pid, self.shadows[pid].handle(src, msg))
        return out + self.react(pid, src, msg)

    def rewrite(self, pid: int, out: list) -> list:
        res = []
        for dst, msg in out:
            res.extend(self.rewrite_one(pid, dst, msg))
        return res

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        return [(dst, msg)]

    def react(self, pid: int, src: int, msg: Any) -> list:
        return []

    # helpers shared by the attack strategies

    def fresh_value(self, origin: int, tag: str) -> TaggedValue:
        tv = TaggedValue(origin, self.ctx.lattice.fresh(tag))
        self.ctx.shared.forged_values.add(tv)
        return tv

    def prev_round(self, pid: int, r: int):
        return self.shadows[pid].classifier.rounds.get(r - 1)

    def slave_label_after(self, pid: int, r: int) -> Optional[Label]:
        prev = self.prev_round(pid, r)
        if prev is None or prev.k is None:
            return None
        return Label(prev.k.x2 - self.ctx.params.delta_x2(r - 1))


def _write_init(msg: Any) -> Optional[BrbPayload]:
    if type(msg) is Init and msg.payload.kind == "write":
        return msg.payload
    return None


class Equivocator(ShadowStrategy):
    """Different inputs (and different writes) to two halves of the correct set."""

    name = "equivocator"

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        correct = list(ctx.correct)
        ctx.rng.shuffle(correct)
        half = len(correct) // 2
        self.group_a = sorted(correct[:half]) + list(ctx.byz)
        self.group_b = sorted(correct[half:])
        self.inputs: dict[int, tuple] = {}
        for pid, shadow in self.shadows.items():
            a = BrbPayload(pid, "input", shadow.classifier.empty_proof(),
                           frozenset({TaggedValue(pid, ctx.inputs[pid])}), shadow.k0, 0)
            b = BrbPayload(pid, "input", a.pf, frozenset({self.fresh_value(pid, f"eq{pid}")}), a.k, 0)
            self.inputs[pid] = (a, b)

    def _votes(self, a: BrbPayload, b: BrbPayload) -> list:
        out = [(ALL, Echo(a)), (ALL, Echo(b))]
        out += [(d, Ready(a)) for d in self.group_a] + [(d, Ready(b)) for d in self.group_b]
        return out

    def _split(self, a: BrbPayload, b: BrbPayload) -> list:
        out = [(d, Init(a)) for d in self.group_a] + [(d, Init(b)) for d in self.group_b]
        return out + self._votes(a, b)

    def on_start(self, pid: int) -> list:
        out = super().on_start(pid)
        # colluders vote for each other's split inputs as well
        for other in self.ctx.byz:
            if other != pid:
                out += self._votes(*self.inputs[other])
        return out

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        if type(msg) is Init and msg.payload.origin == pid and dst == ALL:
            p = msg.payload
            if p.kind == "input":
                return self._split(*self.inputs[pid])
            if p.kind == "write" and len(p.v) > 1:
                drop = max(p.v, key=lambda tv: (tv.origin, repr(tv.element)))
                return self._split(p, BrbPayload(pid, "write", p.pf, p.v - {drop}, p.k, p.r))
        return [(dst, msg)]


class ValueInjector(ShadowStrategy):
    """At r >= 2, a slave-labelled write whose value set grew since r-1."""

    name = "value_injector"

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        p = _write_init(msg)
        if p is None or p.origin != pid or p.r < 2:
            return [(dst, msg)]
        r = p.r
        k = self.slave_label_after(pid, r)
        prev = self.prev_round(pid, r)
        victim = self.ctx.rng.choice(self.ctx.correct)
        extra = {self.fresh_value(pid, f"inj{pid}.{r}"), self.fresh_value(victim, f"forge{pid}.{r}")}
        V = (prev.V or EMPTY) | frozenset(extra)
        pf = p.pf if p.pf else self.shadows[pid].classifier.make_proof(prev)
        bad = self.ctx.shared.attack(BrbPayload(pid, "write", pf, V, k, r))
        return [(ALL, Init(bad))]


class FakeSlave(ShadowStrategy):
    """Slave-labelled write with the old value set but a fabricated proof."""

    name = "fake_slave"

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        p = _write_init(msg)
        if p is None or p.origin != pid or p.r < 2:
            return [(dst, msg)]
        r = p.r
        prev = self.prev_round(pid, r)
        k = self.slave_label_after(pid, r)
        pf = self._fake_proof(pid, prev, r)
        if pf is None:
            return [(dst, msg)]
        bad = self.ctx.shared.attack(BrbPayload(pid, "write", pf, prev.V, k, r))
        return [(ALL, Init(bad))]

    def _fake_proof(self, pid: int, prev, r: int) -> Any:
        ctx = self.ctx
        mode = ctx.rng.randrange(2)
        if ctx.variant == "auth":
            if mode == 0 or prev.cls == SLAVE:
                # racks signed only by colluders: too few distinct signers
                key = ctx.keys[pid]
                return frozenset(
                    ctx.registry.make_ack(ctx.keys[b], "rack", prev.V, r - 1, prev.k) for b in ctx.byz
                ) | {ctx.registry.make_ack(key, "rack", EMPTY, r - 1, prev.k)}
            # a master's genuine racks exceed the label, so the bound clause fails
            return frozenset(prev.RV.values())
        if mode == 0:
            junk = frozenset({self.fresh_value(pid, f"junkpf{pid}.{r}")})
            return tuple(junk for _ in range(ctx.n))
        big = frozenset(self.fresh_value(pid, f"big{pid}.{r}.{i}") for i in range(ctx.n + 1))
        return tuple(big if j == 1 else EMPTY for j in range(1, ctx.n + 1))


class ReadBeforeWrite(ShadowStrategy):
    """Withholds the write and asks for a read straight away."""

    name = "read_before_write"

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        p = _write_init(msg)
        if p is None or p.origin != pid:
            return [(dst, msg)]
        if self.ctx.variant == "auth":
            own = self.ctx.registry.make_ack(self.ctx.keys[pid], "wack", EMPTY, p.r, p.k)
            self.ctx.shared.notes.setdefault("unwritten", set()).add((pid, p.r))
            return [(ALL, AuthRead(frozenset({own}), p.k, p.r))]
        read = self.ctx.shared.attack(BrbPayload(pid, "read", (), EMPTY, p.k, p.r))
        return [(ALL, Init(read))]


class RushingMaster(ShadowStrategy):
    """Sends master(T, k, r) before finishing its own write step."""

    name = "rushing_master"

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        p = _write_init(msg)
        if p is None or p.origin != pid:
            return [(dst, msg)]
        ctx = self.ctx
        if ctx.rng.random() < 0.5:
            victim = ctx.rng.choice(ctx.correct)
            T = frozenset({self.fresh_value(pid, f"rush{pid}.{p.r}"), self.fresh_value(victim, f"rushv{pid}.{p.r}")})
            T = T | p.v
        else:
            T = p.v
        return [(ALL, Master(T, p.k, p.r)), (dst, msg)]


_GARBAGE = (b"\x00garbage", "not a message", 12345, None)


class JunkAcks(ShadowStrategy):
    """Honest shadow plus a stream of malformed or unjustified acks."""

    name = "junk_acks"
    rate = 0.3

    def react(self, pid: int, src: int, msg: Any) -> list:
        ctx = self.ctx
        if src in ctx.byz or ctx.rng.random() >= self.rate:
            return []
        r = max(0, getattr(getattr(msg, "payload", msg), "r", 1) or 0)
        junk = frozenset({self.fresh_value(pid, f"junk{pid}.{ctx.rng.randrange(10**6)}")})
        k = Label(ctx.rng.randrange(2 * ctx.n + 2))
        choice = ctx.rng.randrange(8)
        if choice == 0:
            out = Rack(junk, r)
        elif choice == 1:
            out = Mack(junk, r)
        elif choice == 2:
            out = Master(junk, k, r)
        elif choice == 3:
            out = Wack(r + ctx.rng.randrange(3))
        elif choice == 4:
            out = SignedAck("rack", junk, r, k, src, b"\x00" * 16)  # forged signer
        elif choice == 5:
            out = SignedAck("rack", junk, r, k, pid, b"\x01" * 16)  # bad tag
        elif choice == 6 and ctx.registry is not None:
            out = ctx.registry.make_ack(ctx.keys[pid], ctx.rng.choice(("rack", "wack")), junk, r, k)
        else:
            out = ctx.rng.choice(_GARBAGE)
        dst = ALL if ctx.rng.random() < 0.2 else src
        return [(dst, out)]


class StaleProof(ShadowStrategy):
    """Auth only: reuses signed acks from an earlier round as the current proof."""

    name = "stale_proof"
    auth_only = True

    def rewrite_one(self, pid: int, dst: int, msg: Any) -> list:
        p = _write_init(msg)
        cls = self.shadows[pid].classifier
        if p is None or p.origin != pid or p.r < 2:
            return [(dst, msg)]
        r = p.r
        if r >= 3 and cls.rounds.get(r - 2) is not None and cls.rounds[r - 2].RV:
            stale = frozenset(cls.rounds[r - 2].RV.values())
        else:
            stale = frozenset(a for a in cls.rounds[r - 1].wacks.values() if a is not None)
        prev = cls.rounds[r - 1]
        k = self.slave_label_after(pid, r)
        bad = self.ctx.shared.attack(BrbPayload(pid, "write", stale, prev.V, k, r))
        read = AuthRead(stale, k, r)
        self.ctx.shared.notes.setdefault("unwritten", set()).add((pid, r))
        return [(ALL, Init(bad)), (ALL, read)]


STRATEGIES: dict[str, type] = {
    cls.name: cls
    for cls in (Silent, Equivocator, ValueInjector, FakeSlave, ReadBeforeWrite, RushingMaster, JunkAcks, StaleProof)
}

# mutation switch -> the strategy that attacks the disabled defence
MUTATION_TARGETS = {
    "slave-proof-off": "value_injector",
    "read-gate-off": "read_before_write",
    "master-wait-off": "rushing_master",
    "brb-weak": "equivocator",
}


def register(cls: type) -> type:
    STRATEGIES[cls.name] = cls
    return cls


def catalog(variant: str) -> list[str]:
    return [name for name, cls in STRATEGIES.items() if variant == "auth" or not cls.auth_only]


def make_strategy(name: str) -> Strategy:
    try:
        return STRATEGIES[name]()
    except KeyError:
        raise ValueError(f"unknown adversary {name!r}; choose from {sorted(STRATEGIES)}") from None
