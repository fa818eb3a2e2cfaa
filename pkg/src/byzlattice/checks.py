"""Property and trace-invariant checkers.

Everything here recomputes from the trace (and the final process states)
rather than trusting counters kept by the protocol code.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Optional

from .brb import echo_quorum
from .lattice import Label, TaggedValue, TreeParams, initial_label
from .messages import SignedAck, digest, signing_bytes

SAFETY = ("comparability", "downward", "upward")


@dataclass
class Violation:
    check: str
    detail: str

    def as_dict(self) -> dict:
        return {"check": self.check, "detail": self.detail}


@dataclass
class TrialView:
    """What the checkers need to know about a finished trial."""

    n: int
    f: int
    t: int
    variant: str
    params: TreeParams
    lattice: Any
    correct: tuple
    byz: tuple
    inputs: dict
    procs: dict
    trace: Any
    sim: Any
    D: int
    attack_payloads: set = field(default_factory=set)
    notes: dict = field(default_factory=dict)
    registry: Any = None
    queued_dsts: Optional[frozenset] = None


def _fmt(vs) -> str:
    return "{" + ",".join(sorted(f"{tv.origin}:{tv.element!r}" for tv in vs)) + "}"


# ---- the three agreement properties ----------------------------------------------


def check_comparability(view: TrialView) -> list[Violation]:
    out = []
    done = [p for p in view.procs.values() if p.done]
    lat = view.lattice
    for a, b in combinations(done, 2):
        ya, yb = a.output, b.output
        if not (lat.leq(ya, yb) or lat.leq(yb, ya)):
            out.append(Violation("comparability", f"outputs of {a.pid} and {b.pid} are incomparable"))
        if not (a.V <= b.V or b.V <= a.V):
            out.append(Violation("comparability", f"value sets of {a.pid} and {b.pid} are incomparable"))
    return out


def check_downward(view: TrialView) -> list[Violation]:
    out = []
    lat = view.lattice
    for p in view.procs.values():
        if not p.done:
            continue
        x = view.inputs[p.pid]
        if TaggedValue(p.pid, x) not in p.V:
            out.append(Violation("downward", f"own input missing from V of {p.pid}"))
        if not lat.leq(x, p.output):
            out.append(Violation("downward", f"x_{p.pid} not below y_{p.pid}"))
    return out


def check_upward(view: TrialView) -> list[Violation]:
    out = []
    correct = set(view.correct)
    byz_values: dict[int, set] = defaultdict(set)
    for p in view.procs.values():
        if not p.done:
            continue
        for tv in p.V:
            if tv.origin in correct:
                if tv.element != view.inputs[tv.origin]:
                    out.append(Violation("upward", f"forged value for correct origin {tv.origin} in V of {p.pid}"))
            else:
                byz_values[tv.origin].add(tv)
    for origin, vals in sorted(byz_values.items()):
        if len(vals) > 1:
            out.append(Violation("upward", f"Byzantine origin {origin} contributed {len(vals)} values"))
    total = sum(len(v) for v in byz_values.values())
    if total > view.t:
        out.append(Violation("upward", f"{total} Byzantine values exceed t={view.t}"))
    return out


# ---- trace preprocessing ----------------------------------------------------------


class Indexed:
    """Events grouped once so each checker is a linear pass."""

    def __init__(self, view: TrialView):
        self.view = view
        self.by_kind: dict[str, list] = defaultdict(list)
        for seq, (t, pid, kind, r, k, data) in enumerate(view.trace.events):
            self.by_kind[kind].append((seq, pid, r, k, data))
        # first delivery order per (origin, type, r, pid)
        self.deliveries: dict[tuple, dict[int, tuple]] = defaultdict(dict)
        for seq, pid, r, k, d in self.by_kind["brb_deliver"]:
            self.deliveries[(d["origin"], d["type"], r)].setdefault(pid, (seq, d["digest"], k, d["v"]))
        # U^r_k: union of everything delivered as a round-r write with label k
        self.U: dict[tuple, set] = defaultdict(set)
        for (origin, typ, r), per in self.deliveries.items():
            if typ != "write":
                continue
            for seq, dg, k, v in per.values():
                self.U[(r, k)] |= v
        self.round_done = self.by_kind["round_done"]


def check_brb(view: TrialView, ix: Indexed) -> list[Violation]:
    out = []
    correct = view.correct
    quorum = echo_quorum(view.n, view.f)
    echoers: dict[bytes, set] = defaultdict(set)
    for seq, pid, r, k, d in ix.by_kind["brb_echo"]:
        echoers[d["digest"]].add(pid)
    seen_per_proc: dict[tuple, int] = defaultdict(int)
    for seq, pid, r, k, d in ix.by_kind["brb_deliver"]:
        seen_per_proc[(pid, d["origin"], d["type"], r)] += 1
    for key, count in seen_per_proc.items():
        if count > 1:
            out.append(Violation("brb-uniqueness", f"process {key[0]} delivered {key[1:]} {count} times"))
    for key, per in ix.deliveries.items():
        digests = {dg for _, dg, _, _ in per.values()}
        if len(digests) > 1:
            out.append(Violation("brb-agreement", f"{key} delivered with {len(digests)} different payloads"))
        if view.sim.drained and len(per) < len(correct):
            missing = sorted(set(correct) - set(per))
            out.append(Violation("brb-totality", f"{key} not delivered at {missing}"))
        for dg in digests:
            if len(echoers[dg]) < quorum - view.f:
                out.append(Violation("brb-validity-gate", f"{key} delivered with only {len(echoers[dg])} correct echoes"))
    return out


def check_ordering(view: TrialView, ix: Indexed) -> list[Violation]:
    """Write before read: a committed read (or signed rack) needs an earlier widely delivered write."""
    out = []
    need = echo_quorum(view.n, view.f) - view.f
    if view.variant == "unauth":
        for (origin, typ, r), per in ix.deliveries.items():
            if typ != "read":
                continue
            first = min(seq for seq, *_ in per.values())
            writes = ix.deliveries.get((origin, "write", r), {})
            before = sum(1 for seq, *_ in writes.values() if seq < first)
            if before < need:
                out.append(Violation("write-before-read", f"read of {origin} at r={r} committed after only {before} write deliveries"))
    else:
        need = view.n - 2 * view.f
        for seq, pid, r, k, d in ix.by_kind["rack_sent"]:
            j = d["to"]
            writes = ix.deliveries.get((j, "write", r), {})
            before = sum(1 for s, *_ in writes.values() if s < seq)
            if before < need:
                out.append(Violation("write-before-read", f"rack to {j} at r={r} after only {before} write deliveries"))
        for pid, r in sorted(view.notes.get("unwritten", ())):
            hits = [e for e in ix.by_kind["rack_sent"] if e[2] == r and e[4]["to"] == pid]
            if hits:
                out.append(Violation("write-before-read", f"process {pid} obtained a rack at r={r} without writing"))
    # a committed slave write at r+1 needs the writer's read and write at r committed
    d_round = view.params
    for (origin, typ, r), per in ix.deliveries.items():
        if typ != "write" or r < 2:
            continue
        prev = ix.deliveries.get((origin, "write", r - 1))
        if not prev:
            continue
        k = next(iter(per.values()))[2]
        kp = next(iter(prev.values()))[2]
        if k.x2 == kp.x2 - d_round.delta_x2(r - 1):
            if view.variant == "unauth" and (origin, "read", r - 1) not in ix.deliveries:
                out.append(Violation("slave-write-unread", f"slave write of {origin} at r={r} without a committed read"))
    return out


def check_acv(view: TrialView, ix: Indexed) -> list[Violation]:
    """Accepted racks/macks are subsets of the ACV rebuilt from delivery events."""
    out = []
    acv: dict[tuple, set] = defaultdict(set)
    wanted = ("brb_deliver", "rack_accepted", "mack_accepted", "mack_sent", "rack_sent")
    for t, pid, kind, r, k, d in view.trace.events:
        if kind not in wanted:
            continue
        if kind == "brb_deliver":
            if d["type"] == "write":
                acv[(pid, r, k)] |= d["v"]
            continue
        cur = acv[(pid, r, k)]
        R = d["R"]
        if kind in ("rack_accepted", "mack_accepted"):
            if not R <= cur:
                out.append(Violation("acv-subset", f"{kind} at {pid} r={r} not within rebuilt ACV"))
        elif kind == "mack_sent":
            if not d["T"] <= R:
                out.append(Violation("master-wait", f"mack from {pid} to {d['to']} at r={r} before T was delivered"))
            if R != cur:
                out.append(Violation("acv-snapshot", f"mack payload at {pid} differs from rebuilt ACV"))
        elif R != cur:
            out.append(Violation("acv-snapshot", f"rack payload at {pid} r={r} differs from rebuilt ACV"))
    return out


def check_classifier(view: TrialView, ix: Indexed) -> list[Violation]:
    out = []
    p = view.params
    # with f' > f the lower end of every window is strict; with f' = f the
    # leftmost path of the tree can sit exactly on it
    strict = p.f_pow > p.f

    def above(h2: int, lo: int) -> bool:
        return h2 > lo if strict else h2 >= lo

    # size window at each round start, and the bound on U_k^r
    for seq, pid, r, k, d in ix.by_kind["write_start"]:
        w = p.window_x2(r)
        h2 = 2 * len(d["V"])
        if not (above(h2, k.x2 - w) and h2 <= k.x2 + w):
            out.append(Violation("size-window", f"|V|={len(d['V'])} of {pid} outside {k}±{w / 2:g} at r={r}"))
    for (r, k), U in ix.U.items():
        if 1 <= r <= p.rounds and 2 * len(U) > k.x2 + p.window_x2(r):
            out.append(Violation("union-bound", f"|U| = {len(U)} exceeds bound for label {k} at r={r}"))
    for seq, pid, r, k, d in ix.by_kind["output"]:
        if p.rounds and not (above(2 * len(d["V"]), k.x2 - 1) and 2 * len(d["V"]) <= k.x2 + 1):
            out.append(Violation("size-window", f"final |V| of {pid} outside {k}±1/2"))
    groups: dict[tuple, dict[str, list]] = defaultdict(lambda: {"slave": [], "master": []})
    for seq, pid, r, k, d in ix.round_done:
        w = p.window_x2(r)
        Vin, Vout = d["V_in"], d["V_out"]
        h2 = 2 * len(Vout)
        groups[(r, k)][d["cls"]].append((pid, Vout))
        if not Vin <= Vout:
            out.append(Violation("monotone-values", f"V of {pid} shrank in round {r}"))
        if d["cls"] == "master":
            if not k.x2 < h2 <= k.x2 + w:
                out.append(Violation("master-size", f"master {pid} at r={r} has |V|={len(Vout)} for label {k}"))
        else:
            if not (above(h2, k.x2 - w) and h2 <= k.x2) or Vout != Vin:
                out.append(Violation("slave-size", f"slave {pid} at r={r} has |V|={len(Vout)} for label {k}"))
    for (r, k), g in groups.items():
        w = p.window_x2(r)
        delta = p.delta_x2(r)
        s_k, m_k = Label(k.x2 - delta), Label(k.x2 + delta)
        Uk = ix.U.get((r, k), set())
        Us = ix.U.get((r + 1, s_k), set()) if r < p.rounds else None
        Um = ix.U.get((r + 1, m_k), set()) if r < p.rounds else None
        if Us is not None:
            if not Us <= Uk:
                out.append(Violation("slave-split-subset", f"slave group of {k} at r={r + 1} holds values outside U_k"))
            if not Um <= Uk:
                out.append(Violation("master-split-subset", f"master group of {k} at r={r + 1} holds values outside U_k"))
            if 2 * len(Um) > k.x2 + w:
                out.append(Violation("master-split-bound", f"|U_m| = {len(Um)} too large for label {k} at r={r + 1}"))
            if 2 * len(Us) > k.x2:
                out.append(Violation("slave-split-bound", f"|U_s| = {len(Us)} exceeds label {k} at r={r + 1}"))
            for pid, V in g["master"]:
                if not Us <= V:
                    out.append(Violation("master-covers-slaves", f"master {pid} misses slave-group values of {k} at r={r}"))
        slaves = set().union(*(V for _, V in g["slave"])) if g["slave"] else set()
        masters = set().union(*(V for _, V in g["master"])) if g["master"] else set()
        if 2 * len(slaves) > k.x2:
            out.append(Violation("slave-union-bound", f"correct slaves of {k} at r={r} hold {len(slaves)} values"))
        if 2 * len(masters) > k.x2 + w:
            out.append(Violation("master-union-bound", f"correct masters of {k} at r={r} hold {len(masters)} values"))
    return out


def check_liveness(view: TrialView, ix: Indexed) -> list[Violation]:
    out = []
    if not view.sim.terminated:
        stuck = sorted(pid for pid, pr in view.procs.items() if not pr.done)
        out.append(Violation("termination", f"processes {stuck} did not finish"))
    if not view.sim.drained:
        out.append(Violation("fairness", "message queue not drained"))
        return out
    # every correct process's write is delivered at every correct process
    for seq, pid, r, k, d in ix.by_kind["write_start"]:
        per = ix.deliveries.get((pid, "write", r), {})
        if len(per) < len(view.correct):
            out.append(Violation("write-totality", f"write of correct {pid} at r={r} delivered at {len(per)} processes"))
    return out


def check_rounds_and_labels(view: TrialView, ix: Indexed) -> list[Violation]:
    out = []
    p = view.params
    k0 = initial_label(p)
    for pid, pr in view.procs.items():
        if not pr.done:
            continue
        labels = pr.labels
        if len(labels) - 1 != p.rounds:
            out.append(Violation("rounds", f"process {pid} ran {len(labels) - 1} rounds, expected {p.rounds}"))
            continue
        if labels[0] != k0:
            out.append(Violation("label-path", f"process {pid} started at {labels[0]}"))
        for r in range(1, len(labels)):
            if abs(labels[r].x2 - labels[r - 1].x2) != p.delta_x2(r):
                out.append(Violation("label-path", f"process {pid} stepped {labels[r - 1]} -> {labels[r]} at r={r}"))
    # equal final label means identical final value set
    by_label: dict[Label, set] = defaultdict(set)
    for pr in view.procs.values():
        if pr.done:
            by_label[pr.label].add(digest(pr.V))
    for k, ds in by_label.items():
        if len(ds) > 1:
            out.append(Violation("same-group", f"label {k} holds {len(ds)} different value sets"))
    return out


def check_adversary_audit(view: TrialView, ix: Indexed) -> list[Violation]:
    out = []
    for seq, pid, r, k, d in ix.by_kind["origin_conflict"]:
        out.append(Violation("origin-conflict", f"process {pid} saw two values for origins {d['origins']}"))
    if view.attack_payloads:
        for seq, pid, r, k, d in ix.by_kind["brb_deliver"]:
            if d["digest"] in view.attack_payloads:
                out.append(Violation("attack-delivered", f"{d['type']} of {d['origin']} at r={r} delivered at {pid}"))
    if view.registry is not None:
        for seq, pid, r, k, d in ix.by_kind["ack_accepted"]:
            a: SignedAck = d["ack"]
            data = signing_bytes(a.kind, a.payload, a.r, a.k)
            if not view.registry.was_signed(a.signer, data):
                out.append(Violation("signature-audit", f"process {pid} accepted an ack never signed by {a.signer}"))
    return out


def check_fairness(view: TrialView) -> list[Violation]:
    """Recompute the worst overtaking count from send/recv records alone."""
    if view.queued_dsts is None:
        return []
    position: dict[int, int] = {}  # mid -> arrival index among queued sends
    delivered_flags: list[bool] = []
    head = 0
    delivered = 0
    worst = 0
    queued = view.queued_dsts
    for t, kind, src, dst, msg, mid in view.trace.net:
        if dst not in queued:
            continue
        if kind == "send":
            position[mid] = len(delivered_flags)
            delivered_flags.append(False)
        else:
            while delivered_flags[head]:
                head += 1
            if delivered - head > worst:
                worst = delivered - head
            delivered_flags[position.pop(mid)] = True
            delivered += 1
    out = []
    if worst > view.D:
        out.append(Violation("fairness", f"a message was overtaken {worst} times (D={view.D})"))
    if delivered != len(delivered_flags):
        out.append(Violation("fairness", f"{len(delivered_flags) - delivered} queued messages never delivered"))
    return out


CHECKS = {
    "comparability": lambda v, ix: check_comparability(v),
    "downward": lambda v, ix: check_downward(v),
    "upward": lambda v, ix: check_upward(v),
    "brb": check_brb,
    "ordering": check_ordering,
    "acv": check_acv,
    "classifier": check_classifier,
    "liveness": check_liveness,
    "rounds": check_rounds_and_labels,
    "adversary": check_adversary_audit,
    "fairness": lambda v, ix: check_fairness(v),
}


def run_all(view: TrialView, only: tuple = ()) -> list[Violation]:
    """Run the named checker families (all of them when ``only`` is empty)."""
    unknown = set(only) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}; choose from {sorted(CHECKS)}")
    ix = Indexed(view)
    out: list[Violation] = []
    for name, fn in CHECKS.items():
        if not only or name in only:
            out += fn(view, ix)
    return out
