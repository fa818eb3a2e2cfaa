"""Seeded discrete-event network simulator with a fairness-bounded adversarial scheduler.

Virtual time is the delivery step counter. Channels are reliable and
unordered; the scheduler decides delivery order. In adversarial mode the
scheduler picks freely, except that no message may be overtaken by more than
D younger messages before it is delivered.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter, deque
from array import array
from itertools import chain, compress
from operator import itemgetter
from dataclasses import dataclass
from typing import Any, Iterable, Optional

from .lattice import Label
from .messages import ALL, Echo, Init, Ready, encode, message_digest, message_mtype, message_round

POLICIES = ("random", "victim", "ready-first", "byz-first")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    delay: str = "adversarial"  # "adversarial" or "uniform:lo,hi"
    D: int = 50
    step_budget: int = 1_000_000
    policy: Optional[str] = None  # adversarial policy; drawn from the seed when None
    tick_every: int = 64

    def __post_init__(self) -> None:
        if self.D < 1:
            raise ValueError("fairness bound D must be >= 1")
        parse_delay(self.delay)


def parse_delay(spec: str) -> tuple:
    if spec == "adversarial":
        return ("adversarial",)
    if spec.startswith("uniform"):
        body = spec.partition(":")[2] or "1,10"
        lo, hi = (int(x) for x in body.split(","))
        if not 0 <= lo <= hi:
            raise ValueError(f"bad uniform delay bounds {spec!r}")
        return ("uniform", lo, hi)
    raise ValueError(f"unknown delay model {spec!r}")


class Envelope:
    __slots__ = ("seq", "src", "dst", "msg", "enq", "done", "pool")

    def __init__(self, seq: int, src: int, dst: int, msg: Any):
        self.seq = seq
        self.src = src
        self.dst = dst
        self.msg = msg
        self.enq = 0
        self.done = False
        self.pool = 1


# ---- traces -----------------------------------------------------------------


def _event_digest(data: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(data):
        h.update(key.encode())
        try:
            h.update(encode(data[key]))
        except TypeError:
            h.update(repr(data[key]).encode())
    return h.hexdigest()[:32]


class Trace:
    """Network records plus protocol events, both stamped with the step counter.

    A network record is (t, "send"|"recv", src, dst, msg, mid); ``mid`` numbers
    point-to-point sends so a receive can be matched to its send.
    """

    def __init__(self, record_events: bool = True):
        self.t = 0
        self.net: list[tuple] = []
        self.events: list[tuple] = []  # (t, pid, kind, r, k, data)
        self.record_events = record_events
        self._summary: Optional[tuple] = None

    def event(self, pid: int, kind: str, r: int, k: Optional[Label], data: dict) -> None:
        if self.record_events:
            self.events.append((self.t, pid, kind, r, k, data))

    def send(self, src: int, dst: int, msg: Any, mid: int) -> None:
        self.net.append((self.t, "send", src, dst, msg, mid))
        self._summary = None

    def recv(self, src: int, dst: int, msg: Any, mid: int) -> None:
        self.net.append((self.t, "recv", src, dst, msg, mid))
        self._summary = None

    def sends(self) -> Iterable[tuple]:
        return (rec for rec in self.net if rec[1] == "send")

    def _summarize(self) -> tuple:
        # digest, send total and sends per message type; the per-record work
        # stays in C (map/itemgetter), Python only visits distinct messages
        if self._summary is None:
            net = self.net
            msgs = list(map(itemgetter(4), net))
            ids = list(map(id, msgs))
            objs = dict(zip(ids, msgs))
            ordinal = {i: j for j, i in enumerate(dict.fromkeys(ids))}
            ords = list(map(ordinal.__getitem__, ids))
            is_send = list(map("send".__eq__, map(itemgetter(1), net)))
            uniq = [objs[i] for i in ordinal]
            h = hashlib.sha256()
            h.update(array("q", chain.from_iterable(map(itemgetter(0, 2, 3, 5), net))).tobytes())
            h.update(bytes(is_send))
            h.update(array("q", ords).tobytes())
            h.update(b"".join(map(message_digest, uniq)))
            counts: Counter = Counter()
            for j, c in Counter(compress(ords, is_send)).items():
                counts[message_mtype(uniq[j])] += c
            self._summary = (h.hexdigest(), sum(is_send), dict(sorted(counts.items())))
        return self._summary

    @property
    def digest(self) -> str:
        return self._summarize()[0]

    def sent_count(self) -> int:
        return self._summarize()[1]

    def counts_by_mtype(self) -> dict:
        return dict(self._summarize()[2])

    def of_kind(self, *kinds: str) -> list[tuple]:
        return [e for e in self.events if e[2] in kinds]

    def jsonl_records(self) -> Iterable[dict]:
        for t, kind, src, dst, msg, mid in self.net:
            k = getattr(msg, "k", None)
            if k is None and isinstance(msg, (Init, Echo, Ready)):
                k = getattr(msg.payload, "k", None)
            yield {
                "t": t,
                "kind": kind,
                "from": src,
                "to": dst,
                "round": message_round(msg),
                "mtype": message_mtype(msg),
                "label_x2": k.x2 if isinstance(k, Label) else -1,
                "digest": message_digest(msg).hex(),
            }
        for t, pid, kind, r, k, data in self.events:
            yield {
                "t": t,
                "kind": kind,
                "from": pid,
                "to": pid,
                "round": r,
                "mtype": "event",
                "label_x2": k.x2 if isinstance(k, Label) else -1,
                "digest": _event_digest(data),
            }

    def write_jsonl(self, path: str) -> int:
        n = 0
        with open(path, "w") as fh:
            for rec in self.jsonl_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                n += 1
        return n


TRACE_FIELDS = {"t": int, "kind": str, "from": int, "to": int, "round": int, "mtype": str, "label_x2": int, "digest": str}


# ---- schedulers ---------------------------------------------------------------


class AdversarialScheduler:
    """Free choice among pending messages, subject to a bound on overtaking.

    A message is overtaken when a younger message is delivered while it is
    pending. The oldest pending message is always the most overtaken one,
    and its count is just ``delivered - its arrival index``, so the bound is
    enforced in O(1): once the head has been overtaken D times it goes next.
    """

    def __init__(self, rng: random.Random, D: int, policy: str, victims: frozenset, byz: frozenset):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.rng = rng
        self.D = D
        self.policy = policy
        self.victims = victims
        self.byz = byz
        self.pools: list[list[Envelope]] = [[], [], []]
        self.fifo: deque[Envelope] = deque()
        self.pushed = 0
        self.delivered = 0
        self.max_deferral = 0
        self.forced = 0

    def _pool(self, env: Envelope) -> int:
        p = self.policy
        if p == "victim":
            return 2 if env.src in self.victims else 1
        if p == "ready-first":
            t = type(env.msg)
            return 0 if t is Ready else 2 if t is Init else 1
        if p == "byz-first":
            return 0 if env.src in self.byz else 1
        return 1

    def push(self, env: Envelope) -> None:
        env.enq = self.pushed
        self.pushed += 1
        pool = env.pool = self._pool(env) if self.policy != "random" else 1
        self.pools[pool].append(env)
        self.fifo.append(env)

    def _take(self, env: Envelope) -> Envelope:
        env.done = True
        self.delivered += 1
        return env

    def pop(self) -> Envelope:
        fifo = self.fifo
        while fifo[0].done:
            fifo.popleft()
        head = fifo[0]
        overtaken = self.delivered - head.enq
        if overtaken > self.max_deferral:
            self.max_deferral = overtaken
        if overtaken >= self.D:
            fifo.popleft()
            self.forced += 1
            return self._take(head)
        rand = self.rng.random
        for pool in self.pools:
            while pool:
                i = int(rand() * len(pool))
                env = pool[i]
                pool[i] = pool[-1]
                pool.pop()
                if not env.done:
                    return self._take(env)
        raise RuntimeError("scheduler inconsistency")  # pragma: no cover

    def __len__(self) -> int:
        return self.pushed - self.delivered


class UniformDelayScheduler:
    def __init__(self, rng: random.Random, lo: int, hi: int):
        self.rng = rng
        self.lo = lo
        self.hi = hi
        self.now = 0
        self.heap: list = []
        self.max_deferral = 0
        self.forced = 0

    def push(self, env: Envelope) -> None:
        heapq.heappush(self.heap, (self.now + self.rng.randint(self.lo, self.hi), env.seq, env))

    def pop(self) -> Envelope:
        at, _, env = heapq.heappop(self.heap)
        self.now = max(self.now, at)
        env.done = True
        return env

    def __len__(self) -> int:
        return len(self.heap)


# ---- simulator ----------------------------------------------------------------


@dataclass
class SimResult:
    terminated: bool
    drained: bool
    steps: int
    messages: int
    max_deferral: int
    forced: int
    policy: str


class Simulator:
    """Drives correct processes and one colluding strategy for all Byzantine pids."""

    def __init__(self, processes: dict, byz: Iterable[int], strategy: Any, cfg: SimConfig, trace: Trace, n: int):
        self.procs = processes
        self.byz = frozenset(byz)
        self.strategy = strategy
        self.cfg = cfg
        self.trace = trace
        self.n = n
        self.rng = random.Random(f"sched|{cfg.seed}")
        self.seq = 0
        model = parse_delay(cfg.delay)
        if model[0] == "adversarial":
            policy = cfg.policy or POLICIES[cfg.seed % len(POLICIES)]
            correct = sorted(processes)
            nv = max(1, (n - len(self.byz)) // 5)
            victims = frozenset(self.rng.sample(correct, min(nv, len(correct))))
            self.sched: Any = AdversarialScheduler(self.rng, cfg.D, policy, victims, self.byz)
        else:
            policy = "uniform"
            self.sched = UniformDelayScheduler(self.rng, model[1], model[2])
        self.policy = policy
        self._byz_work: deque = deque()
        self._everyone = tuple(range(1, n + 1))
        self._ticks = strategy is not None and type(strategy).on_tick is not _base_on_tick()

    def _emit(self, src: int, out: list) -> None:
        # hot path: trace, rushing hand-off and queueing are inlined
        n = self.n
        byz = self.byz
        append = self.trace.net.append
        t = self.trace.t
        push = self.sched.push
        seq = self.seq
        for dst, msg in out:
            if dst == ALL:
                targets = self._everyone
            elif 1 <= dst <= n:
                targets = (dst,)
            else:
                continue
            for d in targets:
                seq += 1
                append((t, "send", src, d, msg, seq))
                if d in byz:
                    # rushing: Byzantine nodes see their inbound traffic immediately
                    append((t, "recv", src, d, msg, seq))
                    if self.strategy is not None:
                        self._byz_work.append((d, src, msg))
                else:
                    push(Envelope(seq, src, d, msg))
        self.seq = seq
        self.trace._summary = None

    def _run_byz(self) -> None:
        work = self._byz_work
        while work:
            pid, src, msg = work.popleft()
            self._emit(pid, self.strategy.on_inbound(pid, src, msg))

    def all_done(self) -> bool:
        return all(p.done for p in self.procs.values())

    def run(self) -> SimResult:
        trace = self.trace
        for pid in sorted(self.procs):
            self._emit(pid, self.procs[pid].start())
        if self.strategy is not None:
            for pid in sorted(self.byz):
                self._emit(pid, self.strategy.on_start(pid))
        self._run_byz()
        budget = self.cfg.step_budget
        tick = self.cfg.tick_every
        sched = self.sched
        procs = self.procs
        steps = 0
        net = trace.net
        emit = self._emit
        pop = sched.pop
        while len(sched) and steps < budget:
            env = pop()
            steps += 1
            trace.t = steps
            net.append((steps, "recv", env.src, env.dst, env.msg, env.seq))
            out = procs[env.dst].handle(env.src, env.msg)
            if out:
                emit(env.dst, out)
            if self._byz_work:
                self._run_byz()
            if self._ticks and steps % tick == 0 and not self.all_done():
                for pid in sorted(self.byz):
                    self._emit(pid, self.strategy.on_tick(pid))
                self._run_byz()
        return SimResult(
            terminated=self.all_done(),
            drained=len(sched) == 0,
            steps=steps,
            messages=trace.sent_count(),
            max_deferral=sched.max_deferral,
            forced=sched.forced,
            policy=self.policy,
        )


def _base_on_tick():
    from .adversary import Strategy

    return Strategy.on_tick


# ---- exhaustive BRB enumeration -------------------------------------------------


@dataclass
class EnumResult:
    schedules: int  # complete delivery orders covered
    pruned_prefixes: int  # delivery-order prefixes checked but not extended
    states: int  # distinct global states after merging
    transitions: int
    truncated: bool
    max_depth: int
    violations: list
    outcomes: dict  # delivered pattern -> number of complete schedules


def _enum_payloads() -> tuple:
    from .lattice import Label, TaggedValue
    from .messages import BrbPayload

    def mk(origin: int, tag: bytes) -> Any:
        return BrbPayload(origin, "input", (), frozenset({TaggedValue(origin, tag)}), Label(0), 0)

    return mk


def enumerate_brb(
    n: int = 4,
    f: int = 1,
    weak: bool = False,
    max_width: int = 1000,
    byz_sends: str = "split",
    seed: int = 0,
) -> EnumResult:
    """Breadth-first over every delivery order of one BRB instance.

    Process n is a Byzantine sender that equivocates: INIT(a) to the lower
    half of the correct processes and INIT(b) to the rest. With
    ``byz_sends="split"`` it also sends ECHO and READY for the same payload
    to each half; with ``"full"`` it sends both to everyone. States
    reached by different orders are merged and carry the number of orders
    that reach them, so every property checked on a state holds for every
    schedule through it. ``weak`` lowers the delivery threshold to f READYs.

    The search is bounded: when a layer holds more than ``max_width`` states
    a seeded sample of that size is kept. Dropped states were still checked
    for agreement and uniqueness; only their continuations are skipped.
    """
    from .brb import BrbEngine, Verdict

    if n > 4 or f < 1 or 3 * f >= n:
        raise ValueError("enumeration is meant for n <= 4 with 1 <= f < n/3")
    mk = _enum_payloads()
    sender = n
    payloads = (mk(sender, b"a"), mk(sender, b"b"))
    digests = tuple(p.digest for p in payloads)
    correct = tuple(range(1, n))
    wrap = {"INIT": Init, "ECHO": Echo, "READY": Ready}
    threshold = max(f, 1) if weak else None
    engines0 = tuple(BrbEngine(p, n, f, lambda _p: Verdict.VALID, threshold) for p in correct)

    pending0: Counter = Counter()
    half = (len(correct) + 1) // 2
    for i, p in enumerate(correct):
        pending0[(sender, p, "INIT", 0 if i < half else 1)] += 1
    if byz_sends == "full":
        for p in correct:
            for kind in ("ECHO", "READY"):
                for idx in (0, 1):
                    pending0[(sender, p, kind, idx)] += 1
    elif byz_sends == "split":
        for i, p in enumerate(correct):
            for kind in ("ECHO", "READY"):
                pending0[(sender, p, kind, 0 if i < half else 1)] += 1
    elif byz_sends != "init":
        raise ValueError(f"unknown byz_sends {byz_sends!r}")

    def key(engines: tuple, pending: Counter) -> tuple:
        return tuple(e.state_key() for e in engines), tuple(sorted(pending.items()))

    def delivered(engines: tuple) -> tuple:
        out = []
        for e in engines:
            d = e.delivered((sender, "input", 0))
            out.append(None if d is None else digests.index(d.digest))
        return tuple(out)

    violations: list = []
    outcomes: Counter = Counter()
    rng = random.Random(f"enum|{seed}")
    layer = {key(engines0, pending0): (engines0, pending0, 1)}
    states = 1
    transitions = 0
    schedules = 0
    prefixes = 0
    depth = 0
    truncated = False
    while layer:
        if len(layer) > max_width:
            truncated = True
            keys = list(layer)  # insertion order is deterministic
            kept = set(rng.sample(range(len(keys)), max_width))
            for i, k in enumerate(keys):
                if i not in kept:
                    prefixes += layer.pop(k)[2]
        nxt: dict = {}
        for engines, pending, count in layer.values():
            if not pending:
                got = delivered(engines)
                schedules += count
                outcomes[got] += count
                if any(g is not None for g in got) and any(g is None for g in got):
                    violations.append(f"totality: delivered pattern {got}")
                continue
            for item in list(pending):
                src, dst, kind, idx = item
                transitions += 1
                i = correct.index(dst)
                eng = engines[i].clone()
                msg = wrap[kind](payloads[idx])
                before = eng.delivered((sender, "input", 0))
                if kind == "INIT":
                    out = eng.on_init(src, msg.payload)
                elif kind == "ECHO":
                    out = eng.on_echo_msg(src, msg.payload)
                else:
                    out, got = eng.on_ready_msg(src, msg.payload)
                    if got is not None and before is not None:
                        violations.append(f"uniqueness: process {dst} delivered twice")
                new_pending = pending.copy()
                new_pending[item] -= 1
                if not new_pending[item]:
                    del new_pending[item]
                for _dst, m in out:
                    j = digests.index(m.payload.digest)
                    for p in correct:
                        new_pending[(dst, p, m.mtype, j)] += 1
                new_engines = engines[:i] + (eng,) + engines[i + 1:]
                got = [g for g in delivered(new_engines) if g is not None]
                if len(set(got)) > 1:
                    violations.append(f"agreement: delivered {sorted(set(got))} at depth {depth + 1}")
                k = key(new_engines, new_pending)
                prev = nxt.get(k)
                if prev is None:
                    nxt[k] = (new_engines, new_pending, count)
                    states += 1
                else:
                    nxt[k] = (prev[0], prev[1], prev[2] + count)
            if len(violations) > 50:
                break
        layer = nxt
        depth += 1
        if len(violations) > 50:
            truncated = bool(layer)
            break
    return EnumResult(
        schedules=schedules,
        pruned_prefixes=prefixes,
        states=states,
        transitions=transitions,
        truncated=truncated,
        max_depth=depth,
        violations=sorted(set(violations)),
        outcomes={str(k): v for k, v in sorted(outcomes.items(), key=lambda kv: str(kv[0]))},
    )
