"""The unauthenticated Byzantine classifier: write, read, classify, master write-read.

State for every round is kept side by side and every handler accepts
messages for any round, because neighbours may run ahead or lag behind.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Any, Optional

from .brb import Verdict, echo_quorum
from .lattice import EMPTY, Label, ValueAccumulator
from .messages import ALL, BrbPayload, Mack, Master, Rack, Wack

if TYPE_CHECKING:
    from .protocol import Process

SLAVE = "slave"
MASTER = "master"


class RoundState:
    __slots__ = (
        "r", "LB", "ACV", "writes", "RT", "wacks", "racks", "RV", "masters",
        "pending_masters", "macks", "MV", "answered_reads",
        "k", "V", "phase", "proof", "T", "cls",
    )

    def __init__(self, r: int):
        self.r = r
        self.LB: dict[int, Label] = {}
        self.ACV: dict[Label, ValueAccumulator] = {}
        self.writes: dict[int, BrbPayload] = {}  # delivered writes by origin
        self.RT: dict[int, frozenset] = {}  # unset until the origin's read is delivered
        self.wacks: dict[int, Any] = {}
        self.racks: dict[int, Any] = {}  # first rack per sender, accepted or not
        self.RV: dict[int, Any] = {}  # accepted racks
        self.masters: set = set()
        self.pending_masters: dict[int, Master] = {}
        self.macks: dict[int, Any] = {}
        self.MV: dict[int, frozenset] = {}
        self.answered_reads: set = set()
        # own progress in this round
        self.k: Optional[Label] = None
        self.V: Optional[frozenset] = None
        self.phase: Optional[str] = None  # write | read | master | done
        self.proof: Any = None
        self.T: Optional[frozenset] = None
        self.cls: Optional[str] = None

    def acv(self, k: Label) -> ValueAccumulator:
        acc = self.ACV.get(k)
        if acc is None:
            acc = self.ACV[k] = ValueAccumulator()
        return acc


def pf_union(payload: BrbPayload) -> frozenset:
    cache = payload.__dict__
    u = cache.get("_pf_union")
    if u is None:
        u = frozenset().union(*payload.pf) if payload.pf else EMPTY
        cache["_pf_union"] = u
    return u


class Classifier:
    def __init__(self, proc: Process):
        self.p = proc
        self.n = proc.n
        self.f = proc.f
        self.params = proc.params
        self.quorum = proc.n - proc.f
        self.rounds: dict[int, RoundState] = {}
        self.mutations = proc.mutations

    def round(self, r: int) -> RoundState:
        rs = self.rounds.get(r)
        if rs is None:
            rs = self.rounds[r] = RoundState(r)
        return rs

    # ---- own steps -------------------------------------------------------

    def start(self, V: frozenset, k: Label, r: int) -> list:
        rs = self.round(r)
        rs.k, rs.V, rs.phase = k, V, "write"
        prev = self.rounds.get(r - 1)
        pf = prev.proof if prev is not None and prev.cls == SLAVE else self.empty_proof()
        payload = BrbPayload(self.p.pid, "write", pf, V, k, r)
        self.p.log("write_start", r, k, V=V, pf=pf)
        out = self.p.brb.broadcast(payload)
        out += self._check_wacks(rs)
        return out

    def empty_proof(self) -> Any:
        return ()

    def make_proof(self, rs: RoundState) -> Any:
        return tuple(rs.RV.get(j, EMPTY) for j in range(1, self.n + 1))

    def proof_values(self, rs: RoundState) -> list:
        return list(rs.RV.values())

    def _check_wacks(self, rs: RoundState) -> list:
        if rs.phase == "write" and len(rs.wacks) >= self.quorum:
            rs.phase = "read"
            return self.start_read(rs)
        return []

    def start_read(self, rs: RoundState) -> list:
        self.p.log("read_start", rs.r, rs.k)
        out = self.p.brb.broadcast(BrbPayload(self.p.pid, "read", (), EMPTY, rs.k, rs.r))
        out += self._scan_racks(rs)
        return out

    def _scan_racks(self, rs: RoundState) -> list:
        if rs.phase != "read":
            return []
        acc = rs.acv(rs.k)
        for sender, ack in rs.racks.items():
            if sender not in rs.RV and acc.covers(self.rack_values(ack)):
                rs.RV[sender] = ack
                self.p.log("rack_accepted", rs.r, rs.k, sender=sender, R=self.rack_values(ack))
        if len(rs.RV) >= self.quorum:
            return self.classify(rs)
        return []

    def rack_values(self, ack: Any) -> frozenset:
        return ack

    def classify(self, rs: RoundState) -> list:
        rs.proof = self.make_proof(rs)
        T = frozenset().union(*(self.rack_values(a) for a in rs.RV.values()))
        rs.T = T
        master = 2 * len(T) > rs.k.x2
        self.p.log("classified", rs.r, rs.k, cls=MASTER if master else SLAVE, T=T)
        if master:
            rs.phase = "master"
            out = [(ALL, Master(T, rs.k, rs.r))]
            out += self._scan_macks(rs)
            return out
        rs.phase = "done"
        rs.cls = SLAVE
        return self.p.on_round_result(rs.V, SLAVE, rs.r)

    def _scan_macks(self, rs: RoundState) -> list:
        if rs.phase != "master":
            return []
        acc = rs.acv(rs.k)
        for sender, R in rs.macks.items():
            if sender not in rs.MV and acc.covers(R):
                rs.MV[sender] = R
                self.p.log("mack_accepted", rs.r, rs.k, sender=sender, R=R)
        if len(rs.MV) < self.quorum:
            return []
        T2 = frozenset().union(*rs.MV.values())
        rs.phase = "done"
        rs.cls = MASTER
        self.p.log("master_wr", rs.r, rs.k, T=T2)
        return self.p.on_round_result(T2, MASTER, rs.r)

    # ---- deliveries ------------------------------------------------------

    def on_deliver(self, payload: BrbPayload) -> list:
        if payload.kind == "write":
            return self.on_deliver_write(payload)
        return self.on_deliver_read(payload)

    def on_deliver_write(self, payload: BrbPayload) -> list:
        r, k, v, origin = payload.r, payload.k, payload.v, payload.origin
        rs = self.round(r)
        if 1 <= r <= self.params.rounds:
            self.p.safe_set(Label(k.x2 + self.params.delta_x2(r))).add(v)
        acc = rs.acv(k)
        conflicts = acc.add(v)
        if conflicts:
            self.p.log("origin_conflict", r, k, origins=conflicts)
        rs.LB[origin] = k
        rs.writes[origin] = payload
        out = self.write_ack(rs, origin, k)
        out += self.revalidate(rs)
        return out

    def write_ack(self, rs: RoundState, origin: int, k: Label) -> list:
        return [(origin, Wack(rs.r))]

    def on_deliver_read(self, payload: BrbPayload) -> list:
        rs = self.round(payload.r)
        origin = payload.origin
        snap = rs.acv(payload.k).snapshot()
        rs.RT[origin] = snap
        self.p.log("rack_sent", payload.r, payload.k, to=origin, R=snap)
        return [(origin, Rack(snap, payload.r))]

    def revalidate(self, rs: RoundState) -> list:
        """Re-run every wait that depends on ACV^r after it grew."""
        out = []
        if rs.pending_masters:
            for sender, m in list(rs.pending_masters.items()):
                acc = rs.acv(m.k)
                if acc.covers(m.values):
                    del rs.pending_masters[sender]
                    out.append(self._mack(rs, sender, m, acc))
        if rs.phase == "read" and len(rs.racks) > len(rs.RV):
            out += self._scan_racks(rs)
        elif rs.phase == "master" and len(rs.macks) > len(rs.MV):
            out += self._scan_macks(rs)
        return out

    def _mack(self, rs: RoundState, sender: int, m: Master, acc: ValueAccumulator) -> tuple:
        snap = acc.snapshot()
        self.p.log("mack_sent", rs.r, m.k, to=sender, T=m.values, R=snap)
        return (sender, Mack(snap, rs.r))

    # ---- point-to-point messages ----------------------------------------

    def on_message(self, src: int, msg: Any) -> list:
        t = type(msg)
        if t is Wack:
            rs = self.round(msg.r)
            rs.wacks.setdefault(src, None)
            return self._check_wacks(rs)
        if t is Rack:
            rs = self.round(msg.r)
            if src in rs.racks:
                return []
            rs.racks[src] = msg.values
            return self._scan_racks(rs)
        if t is Master:
            return self.on_master(src, msg)
        if t is Mack:
            rs = self.round(msg.r)
            if src in rs.macks:
                return []
            rs.macks[src] = msg.values
            return self._scan_macks(rs)
        return self.p.drop(src, msg, "unexpected message type")

    def on_master(self, src: int, msg: Master) -> list:
        rs = self.round(msg.r)
        if src in rs.masters:
            return []
        rs.masters.add(src)
        acc = rs.acv(msg.k)
        if "master-wait-off" in self.mutations or acc.covers(msg.values):
            return [self._mack(rs, src, msg, acc)]
        rs.pending_masters[src] = msg
        return []

    # ---- echo gate -------------------------------------------------------

    def prior_label(self, origin: int, r: int) -> Optional[Label]:
        prev = self.rounds.get(r - 1)
        return None if prev is None else prev.LB.get(origin)

    def valid(self, payload: BrbPayload) -> Verdict:
        if payload.kind == "write":
            return self.valid_write(payload)
        if payload.kind == "read":
            return self.valid_read(payload)
        return Verdict.INVALID

    def is_slave(self, payload: BrbPayload) -> Optional[bool]:
        """None while the sender's previous-round label is unknown here."""
        r = payload.r
        if r == 1:
            return False
        lb = self.prior_label(payload.origin, r)
        if lb is None:
            return None
        return payload.k.x2 == lb.x2 - self.params.delta_x2(r - 1)

    def valid_write(self, payload: BrbPayload) -> Verdict:
        r = payload.r
        if not 1 <= r <= self.params.rounds:
            return Verdict.INVALID
        slave = self.is_slave(payload)
        if slave is None:
            return Verdict.PENDING
        if not slave:
            s = self.p.S.get(payload.k)
            return Verdict.VALID if s is not None and s.covers(payload.v) else Verdict.PENDING
        if "slave-proof-off" in self.mutations:
            return Verdict.VALID
        prev = self.rounds[r - 1]
        if prev.writes[payload.origin].v != payload.v:
            return Verdict.INVALID
        return self.valid_slave_proof(payload, prev)

    def valid_slave_proof(self, payload: BrbPayload, prev: RoundState) -> Verdict:
        pf = payload.pf
        if not isinstance(pf, tuple) or len(pf) != self.n:
            return Verdict.INVALID
        lb = prev.LB[payload.origin]
        if 2 * len(pf_union(payload)) > lb.x2:
            return Verdict.INVALID
        rt = prev.RT.get(payload.origin)
        if rt is None:
            return Verdict.PENDING
        return Verdict.VALID if pf[self.p.pid - 1] == rt else Verdict.INVALID

    def valid_read(self, payload: BrbPayload) -> Verdict:
        if "read-gate-off" in self.mutations:
            return Verdict.VALID
        rs = self.rounds.get(payload.r)
        w = None if rs is None else rs.writes.get(payload.origin)
        if w is None:
            return Verdict.PENDING
        return Verdict.VALID if w.k == payload.k else Verdict.INVALID


__all__ = ["Classifier", "RoundState", "SLAVE", "MASTER", "echo_quorum", "pf_union"]
