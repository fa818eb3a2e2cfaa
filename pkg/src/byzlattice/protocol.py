"""Per-process state machine: initial reliable broadcast, L classifier rounds, output."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .auth import AuthClassifier, SignatureRegistry
from .brb import BrbEngine, Verdict
from .classifier import MASTER, Classifier
from .lattice import (
    JoinLattice,
    Label,
    SetUnionLattice,
    TaggedValue,
    TreeParams,
    ValueAccumulator,
    initial_label,
    join_all,
    master_label,
    slave_label,
)
from .messages import BrbPayload, Echo, Init, Ready, well_formed

MUTATIONS = ("slave-proof-off", "read-gate-off", "master-wait-off", "brb-weak")


class NullLog:
    """Event sink that discards everything (used for adversary shadows)."""

    def event(self, pid: int, kind: str, r: int, k: Optional[Label], data: dict) -> None:
        pass


@dataclass
class ProcessConfig:
    pid: int
    n: int
    f: int
    variant: str = "unauth"
    lattice: JoinLattice = field(default_factory=SetUnionLattice)
    input: Any = None
    mutations: frozenset = frozenset()
    registry: Optional[SignatureRegistry] = None
    tree_rule: str = "strict"

    def __post_init__(self) -> None:
        if self.variant not in ("unauth", "auth"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 1 <= self.pid <= self.n:
            raise ValueError(f"pid {self.pid} outside 1..{self.n}")
        unknown = set(self.mutations) - set(MUTATIONS)
        if unknown:
            raise ValueError(f"unknown mutations {sorted(unknown)}")
        self.mutations = frozenset(self.mutations)
        self.tree = TreeParams.build(self.n, self.f, self.variant, self.tree_rule)
        if self.variant == "auth" and self.registry is None:
            raise ValueError("auth variant needs a signature registry")


class Process:
    def __init__(self, cfg: ProcessConfig, trace: Any = None):
        self.cfg = cfg
        self.pid = cfg.pid
        self.n = cfg.n
        self.f = cfg.f
        self.params = cfg.tree
        self.lattice = cfg.lattice
        self.mutations = cfg.mutations
        self.trace = trace if trace is not None else NullLog()
        self.k0 = initial_label(self.params)
        threshold = max(self.f, 1) if "brb-weak" in self.mutations else None
        self.brb = BrbEngine(self.pid, self.n, self.f, self.valid, threshold, self._on_echo)
        if cfg.variant == "auth":
            self.registry = cfg.registry
            self.key = cfg.registry.key_for(self.pid)
            self.classifier: Classifier = AuthClassifier(self)
        else:
            self.classifier = Classifier(self)
        self.S: dict[Label, ValueAccumulator] = {}
        self.inputs: set = set()
        self.phase = "initial"
        self.label = self.k0
        self.V: Optional[frozenset] = None
        self.round = 0
        self.labels: list[Label] = [self.k0]
        self.output: Any = None
        self.dropped = 0

    # ---- plumbing used by the classifiers ----------------------------------

    def log(self, kind: str, r: int, k: Optional[Label], **data: Any) -> None:
        self.trace.event(self.pid, kind, r, k, data)

    def safe_set(self, k: Label) -> ValueAccumulator:
        acc = self.S.get(k)
        if acc is None:
            acc = self.S[k] = ValueAccumulator()
        return acc

    def drop(self, src: int, msg: Any, reason: str) -> list:
        self.dropped += 1
        self.log("dropped", -1, None, src=src, reason=reason)
        return []

    @property
    def done(self) -> bool:
        return self.phase == "done"

    # ---- lifecycle ---------------------------------------------------------

    def start(self) -> list:
        tv = TaggedValue(self.pid, self.cfg.input)
        payload = BrbPayload(self.pid, "input", self.classifier.empty_proof(), frozenset({tv}), self.k0, 0)
        self.log("input_bcast", 0, self.k0, v=payload.v)
        return self.brb.broadcast(payload)

    def handle(self, src: int, msg: Any) -> list:
        if not well_formed(msg, self.n):
            return self.drop(src, msg, "malformed")
        t = type(msg)
        if t is Init:
            return self.brb.on_init(src, msg.payload)
        if t is Echo:
            return self.brb.on_echo_msg(src, msg.payload)
        if t is Ready:
            out, delivered = self.brb.on_ready_msg(src, msg.payload)
            if delivered is not None:
                out += self._deliver(delivered)
            return out
        return self.classifier.on_message(src, msg)

    def _on_echo(self, payload: BrbPayload) -> None:
        self.log("brb_echo", payload.r, payload.k, origin=payload.origin, type=payload.kind, digest=payload.digest)

    def _deliver(self, payload: BrbPayload) -> list:
        self.log(
            "brb_deliver", payload.r, payload.k,
            origin=payload.origin, type=payload.kind, digest=payload.digest, v=payload.v,
        )
        if payload.kind == "input":
            out = self._deliver_input(payload)
        else:
            out = self.classifier.on_deliver(payload)
        out += self.brb.recheck_pending()
        return out

    def _deliver_input(self, payload: BrbPayload) -> list:
        acc = self.safe_set(self.k0)
        conflicts = acc.add(payload.v)
        if conflicts:
            self.log("origin_conflict", 0, self.k0, origins=conflicts)
        self.inputs.add(payload.origin)
        # own input must be in V^1 as well; it always arrives since the sender is correct
        if self.phase == "initial" and len(self.inputs) >= self.n - self.f and self.pid in self.inputs:
            self.V = acc.snapshot()
            self.log("v1_fixed", 1, self.k0, V=self.V)
            if self.params.rounds == 0:
                return self.finish()
            self.phase = "round"
            self.round = 1
            return self.classifier.start(self.V, self.k0, 1)
        return []

    def on_round_result(self, V: frozenset, cls: str, r: int) -> list:
        k = self.label
        k_next = master_label(k, r, self.params) if cls == MASTER else slave_label(k, r, self.params)
        self.log("round_done", r, k, cls=cls, V_in=self.V, V_out=V, k_next=k_next)
        self.label = k_next
        self.labels.append(k_next)
        self.V = V
        if r < self.params.rounds:
            self.round = r + 1
            return self.classifier.start(V, k_next, r + 1)
        return self.finish()

    def finish(self) -> list:
        self.output = join_all(self.lattice, self.V)
        self.phase = "done"
        self.log("output", self.params.rounds + 1, self.label, y=self.output, V=self.V)
        return []

    # ---- echo gate ---------------------------------------------------------

    def valid(self, payload: BrbPayload) -> Verdict:
        if payload.kind == "input":
            return Verdict.VALID if self._valid_input(payload) else Verdict.INVALID
        return self.classifier.valid(payload)

    def _valid_input(self, p: BrbPayload) -> bool:
        if p.r != 0 or p.k != self.k0 or p.pf or len(p.v) != 1:
            return False
        (tv,) = p.v
        return tv.origin == p.origin and self.lattice.contains(tv.element)
