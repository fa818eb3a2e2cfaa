"""Trials and batteries: build a system, run it, check it."""
from __future__ import annotations

import gc
import itertools
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Optional

from . import checks
from .adversary import MUTATION_TARGETS, STRATEGIES, AdversaryContext, SharedState, catalog, make_strategy
from .auth import SignatureRegistry
from .lattice import TreeParams, get_lattice
from .messages import clear_caches, digest
from .protocol import MUTATIONS, Process, ProcessConfig
from .simnet import SimConfig, Simulator, Trace


@dataclass(frozen=True)
class TrialConfig:
    n: int = 6
    f: Optional[int] = None  # defaults to the largest f the variant tolerates
    t: Optional[int] = None  # defaults to f
    variant: str = "unauth"
    adversary: str = "silent"
    seed: int = 0
    delay: str = "adversarial"
    D: int = 50
    lattice: str = "set"
    mutations: tuple = ()
    step_budget: Optional[int] = None
    tree: str = "strict"
    checks: tuple = ()  # checker families to run; empty means all

    def resolved(self) -> TrialConfig:
        f = TreeParams.max_f(self.n, self.variant) if self.f is None else self.f
        t = f if self.t is None else self.t
        return replace(self, f=f, t=t, mutations=tuple(sorted(self.mutations)), checks=tuple(self.checks))

    def validate(self) -> None:
        c = self.resolved()
        if c.variant not in ("unauth", "auth"):
            raise ValueError(f"unknown variant {c.variant!r}")
        TreeParams.build(c.n, c.f, c.variant, c.tree)
        if not 0 <= c.t <= c.f:
            raise ValueError(f"need 0 <= t <= f (t={c.t}, f={c.f})")
        if c.adversary not in STRATEGIES:
            raise ValueError(f"unknown adversary {c.adversary!r}")
        if STRATEGIES[c.adversary].auth_only and c.variant != "auth":
            raise ValueError(f"{c.adversary} only applies to the auth variant")
        bad = set(c.mutations) - set(MUTATIONS)
        if bad:
            raise ValueError(f"unknown mutations {sorted(bad)}")
        get_lattice(c.lattice)
        bad = set(c.checks) - set(checks.CHECKS)
        if bad:
            raise ValueError(f"unknown checks {sorted(bad)}; choose from {sorted(checks.CHECKS)}")
        SimConfig(seed=c.seed, delay=c.delay, D=c.D)

    def budget(self) -> int:
        if self.step_budget is not None:
            return self.step_budget
        p = TreeParams.build(self.n, self.f if self.f is not None else TreeParams.max_f(self.n, self.variant), rule=self.tree)
        return 64 * self.n**3 * (p.rounds + 1) + 100_000


@dataclass
class TrialResult:
    config: dict
    terminated: bool
    drained: bool
    steps: int
    messages: int
    messages_by_type: dict
    rounds: int
    phases: int
    outputs: dict  # pid -> {"y", "label", "V_digest"}
    byzantine: list
    violations: list
    max_deferral: int
    policy: str
    trace_digest: str
    wall_ms: float
    trace: Any = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d


def _jsonable(x: Any) -> Any:
    if isinstance(x, frozenset):
        return sorted(_jsonable(e) for e in x)
    if isinstance(x, bytes):
        return x.decode("latin-1")
    return x


def run_trial(cfg: TrialConfig, keep_trace: bool = False) -> TrialResult:
    # a trial allocates hundreds of thousands of long-lived trace tuples;
    # cyclic GC passes over them cost about a third of the run time
    enabled = gc.isenabled()
    gc.disable()
    try:
        return _run_trial(cfg, keep_trace)
    finally:
        clear_caches()
        if enabled:
            gc.enable()
            # collect the trial's cycles now; in a tight loop of trials nothing
            # else would allocate between enable and the next disable
            gc.collect(0)


def _run_trial(cfg: TrialConfig, keep_trace: bool) -> TrialResult:
    cfg = cfg.resolved()
    cfg.validate()
    t0 = time.perf_counter()
    n, f = cfg.n, cfg.f
    params = TreeParams.build(n, f, cfg.variant, cfg.tree)
    lattice = get_lattice(cfg.lattice)
    rng = random.Random(f"trial|{cfg.seed}|{n}|{f}|{cfg.t}")
    byz = tuple(sorted(rng.sample(range(1, n + 1), cfg.t)))
    correct = tuple(p for p in range(1, n + 1) if p not in byz)
    inputs = {p: lattice.make_input(p, rng) for p in range(1, n + 1)}
    registry = SignatureRegistry(cfg.seed) if cfg.variant == "auth" else None
    trace = Trace()
    procs = {
        p: Process(ProcessConfig(p, n, f, cfg.variant, lattice, inputs[p], frozenset(cfg.mutations), registry, cfg.tree), trace)
        for p in correct
    }
    shared = SharedState()
    strategy = None
    if byz:
        strategy = make_strategy(cfg.adversary)
        keys = {b: registry.key_for(b) for b in byz} if registry is not None else {}
        ctx = AdversaryContext(
            n, f, byz, correct, cfg.variant, params, lattice,
            {b: inputs[b] for b in byz}, random.Random(f"adv|{cfg.seed}"), shared, registry, keys,
        )
        strategy.setup(ctx)
    sim_cfg = SimConfig(seed=cfg.seed, delay=cfg.delay, D=cfg.D, step_budget=cfg.budget())
    sim = Simulator(procs, byz, strategy, sim_cfg, trace, n)
    res = sim.run()
    view = checks.TrialView(
        n, f, cfg.t, cfg.variant, params, lattice, correct, byz, inputs, procs, trace, res, cfg.D,
        shared.attack_payloads, shared.notes, registry,
        frozenset(correct) if cfg.delay == "adversarial" else None,
    )
    violations = [v.as_dict() for v in checks.run_all(view, tuple(cfg.checks))]
    phases = len(trace.of_kind("write_start", "read_start")) + sum(
        1 for e in trace.of_kind("classified") if e[5]["cls"] == "master"
    ) + len(correct)
    outputs = {
        p: {"y": _jsonable(pr.output), "label": str(pr.label), "V_digest": digest(pr.V).hex() if pr.V is not None else None}
        for p, pr in procs.items()
    }
    rounds = max((len(pr.labels) - 1 for pr in procs.values()), default=0)
    result = TrialResult(
        config=asdict(cfg),
        terminated=res.terminated,
        drained=res.drained,
        steps=res.steps,
        messages=res.messages,
        messages_by_type=trace.counts_by_mtype(),
        rounds=rounds,
        phases=phases,
        outputs=outputs,
        byzantine=list(byz),
        violations=violations,
        max_deferral=res.max_deferral,
        policy=res.policy,
        trace_digest=trace.digest,
        wall_ms=round((time.perf_counter() - t0) * 1000, 1),
        trace=trace if keep_trace else None,
    )
    if not keep_trace:
        # processes and the trace form reference cycles; emptying the big
        # buffers here lets refcounting free them without a full GC pass
        trace.net = []
        trace.events = []
        for pr in procs.values():
            pr.trace = None
    return result


def message_bound(n: int, rounds: int) -> int:
    return 16 * n**3 * (rounds + 1)


def matrix(
    ns: Iterable[int],
    variant: str = "unauth",
    fs: Optional[Iterable[Optional[int]]] = None,
    ts: Optional[Iterable[Any]] = None,
    adversaries: Optional[Iterable[str]] = None,
    seeds: Iterable[int] = range(50),
    Ds: Iterable[int] = (10, 100),
    **common: Any,
) -> list[TrialConfig]:
    """Cartesian product of trial parameters.

    ``ts`` accepts integers or the symbols "0", "half", "f". Trials with t=0
    are identical for every adversary, so only one is kept. When several D
    values are given they alternate by seed instead of multiplying the matrix.
    """
    seeds = list(seeds)
    Ds = list(Ds)
    adversaries = list(adversaries) if adversaries is not None else catalog(variant)
    out = []
    seen = set()
    for n in ns:
        for f in list(fs) if fs is not None else [None]:
            f_val = TreeParams.max_f(n, variant) if f is None else f
            t_vals = []
            for t in ts if ts is not None else ("0", "half", "f"):
                tv = {"0": 0, "half": -(-f_val // 2), "f": f_val}.get(t, t) if isinstance(t, str) else t
                if tv not in t_vals:
                    t_vals.append(tv)
            for t, adv, seed in itertools.product(t_vals, adversaries, seeds):
                D = Ds[seed % len(Ds)]
                cfg = TrialConfig(n=n, f=f_val, t=t, variant=variant, adversary=adv if t else "silent", seed=seed, D=D, **common)
                key = (n, f_val, t, cfg.adversary, seed)
                if key in seen:
                    continue
                seen.add(key)
                out.append(cfg)
    return out


def summarize(results: list[TrialResult], wall_ms: float) -> dict:
    n_viol = sum(len(r.violations) for r in results)
    return {
        "trials": len(results),
        "failed_trials": sum(1 for r in results if r.violations),
        "violations": n_viol,
        "violations_by_check": _count_checks(results),
        "nonterminated": sum(1 for r in results if not r.terminated),
        "max_rounds": max((r.rounds for r in results), default=0),
        "max_messages": max((r.messages for r in results), default=0),
        "max_deferral": max((r.max_deferral for r in results), default=0),
        "wall_ms": round(wall_ms, 1),
    }


def _count_checks(results: list[TrialResult]) -> dict:
    counts: dict[str, int] = {}
    for r in results:
        for v in r.violations:
            counts[v["check"]] = counts.get(v["check"], 0) + 1
    return dict(sorted(counts.items()))


def run_battery(configs: list[TrialConfig], progress: Any = None) -> dict:
    t0 = time.perf_counter()
    results = []
    for i, cfg in enumerate(configs):
        res = run_trial(cfg)
        results.append(res)
        if progress is not None:
            progress(i, res)
    summary = summarize(results, (time.perf_counter() - t0) * 1000)
    return {"results": results, "summary": summary}


def mutation_matrix(mutation: str, ns: Iterable[int], variant: str = "unauth", seeds: Iterable[int] = range(50), **kw: Any) -> list[TrialConfig]:
    adv = MUTATION_TARGETS[mutation]
    return matrix(ns, variant, ts=("f",), adversaries=[adv], seeds=seeds, mutations=(mutation,), **kw)


def battery_matrix(variant: str, seeds: Iterable[int] = range(50)) -> list[TrialConfig]:
    """The standard safety battery for one variant."""
    ns = (6, 11, 16, 21) if variant == "unauth" else (4, 7, 10, 13)
    return matrix(ns, variant, seeds=seeds)


def message_baselines(results: list[TrialResult]) -> dict:
    """Message counts per configuration, keyed by variant/n/f/t/adversary."""
    groups: dict[str, list] = {}
    for r in results:
        c = r.config
        key = f"{c['variant']} n={c['n']} f={c['f']} t={c['t']} {c['adversary']}"
        groups.setdefault(key, []).append(r)
    out = {}
    for key, rs in sorted(groups.items()):
        counts = [r.messages for r in rs]
        out[key] = {
            "trials": len(rs),
            "min": min(counts),
            "max": max(counts),
            "mean": round(sum(counts) / len(counts), 1),
            "rounds": max(r.rounds for r in rs),
            "bound": message_bound(rs[0].config["n"], max(r.rounds for r in rs)),
        }
    return out
