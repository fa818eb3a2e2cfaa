"""Each checker must be able to fail: feed it doctored trial data."""
import pytest

from byzlattice import checks
from byzlattice.harness import TrialConfig, run_trial
from byzlattice.lattice import TaggedValue


def clean(**kw):
    cfg = TrialConfig(n=6, adversary="equivocator", seed=4, **kw)
    res = run_trial(cfg, keep_trace=True)
    assert res.ok
    return res


class FakeProc:
    def __init__(self, pid, V, lattice):
        self.pid = pid
        self.V = frozenset(V)
        self.done = True
        self.output = frozenset().union(*(tv.element for tv in V)) if V else frozenset()


def view(procs, inputs, t=0, correct=None):
    from byzlattice.lattice import SetUnionLattice, TreeParams

    correct = tuple(sorted(procs)) if correct is None else correct
    return checks.TrialView(
        6, 1, t, "unauth", TreeParams.build(6, 1), SetUnionLattice(), correct, (), inputs, procs, None, None, 10
    )


def tv(o, *e):
    return TaggedValue(o, frozenset(e))


def test_comparability_detects_incomparable_outputs():
    inputs = {1: frozenset({1}), 2: frozenset({2}), 3: frozenset({3})}
    lat = None
    chain = {1: FakeProc(1, [tv(1, 1)], lat), 2: FakeProc(2, [tv(1, 1), tv(2, 2)], lat)}
    assert checks.check_comparability(view(chain, inputs)) == []
    same = {1: FakeProc(1, [tv(1, 1)], lat), 2: FakeProc(2, [tv(1, 1)], lat)}
    assert checks.check_comparability(view(same, inputs)) == []
    bad = {1: FakeProc(1, [tv(1, 1)], lat), 2: FakeProc(2, [tv(2, 2)], lat)}
    found = checks.check_comparability(view(bad, inputs))
    assert {v.check for v in found} == {"comparability"}


def test_downward_detects_missing_input():
    inputs = {1: frozenset({1}), 2: frozenset({2})}
    procs = {1: FakeProc(1, [tv(1, 1)], None), 2: FakeProc(2, [tv(1, 1)], None)}
    found = checks.check_downward(view(procs, inputs))
    assert found and all(v.check == "downward" for v in found)


def test_upward_detects_forgery_and_extra_byzantine_values():
    inputs = {1: frozenset({1}), 2: frozenset({2}), 6: frozenset({6})}
    forged = {1: FakeProc(1, [tv(1, 1), tv(2, 99)], None), 2: FakeProc(2, [tv(2, 2)], None)}
    assert checks.check_upward(view(forged, inputs, correct=(1, 2)))
    two = {1: FakeProc(1, [tv(1, 1), tv(6, 6)], None), 2: FakeProc(2, [tv(2, 2), tv(6, 7)], None)}
    msgs = [v.detail for v in checks.check_upward(view(two, inputs, t=1, correct=(1, 2)))]
    assert any("contributed 2 values" in m for m in msgs)
    ok = {1: FakeProc(1, [tv(1, 1), tv(6, 6)], None), 2: FakeProc(2, [tv(2, 2), tv(6, 6)], None)}
    assert checks.check_upward(view(ok, inputs, t=1, correct=(1, 2))) == []
    assert checks.check_upward(view(ok, inputs, t=0, correct=(1, 2)))


def _view_of(res, **changes):
    from byzlattice.lattice import TreeParams

    cfg = res.config
    procs = changes.pop("procs")
    return checks.TrialView(
        cfg["n"], cfg["f"], cfg["t"], cfg["variant"], TreeParams.build(cfg["n"], cfg["f"]), changes.pop("lattice"),
        changes.pop("correct"), changes.pop("byz"), changes.pop("inputs"), procs, res.trace, changes.pop("sim"), cfg["D"],
    )


def test_fairness_audit_detects_excess_overtaking():
    from byzlattice.lattice import SetUnionLattice

    res = clean()
    sim = type("S", (), {"terminated": True, "drained": True})()
    base = dict(lattice=SetUnionLattice(), correct=(), byz=(), inputs={}, procs={}, sim=sim)
    v = _view_of(res, **base)
    v.queued_dsts = frozenset(p for p in range(1, 7) if p not in res.byzantine)
    assert checks.check_fairness(v) == []
    v.D = 1
    assert [x.check for x in checks.check_fairness(v)] == ["fairness"]


def test_brb_check_catches_a_tampered_delivery():
    res = clean()
    ev = res.trace.events
    i = next(i for i, e in enumerate(ev) if e[2] == "brb_deliver" and e[5]["type"] == "write")
    t, pid, kind, r, k, data = ev[i]
    ev[i] = (t, pid, kind, r, k, dict(data, digest=b"\0" * 16))
    from byzlattice.lattice import SetUnionLattice

    sim = type("S", (), {"terminated": True, "drained": True})()
    correct = tuple(p for p in range(1, 7) if p not in res.byzantine)
    v = _view_of(res, lattice=SetUnionLattice(), correct=correct, byz=tuple(res.byzantine), inputs={}, procs={}, sim=sim)
    found = {x.check for x in checks.check_brb(v, checks.Indexed(v))}
    assert "brb-agreement" in found


def test_check_selection():
    res = run_trial(TrialConfig(n=6, adversary="silent", seed=0, checks=("comparability",)))
    assert res.ok
    with pytest.raises(ValueError):
        run_trial(TrialConfig(n=6, checks=("nope",)))
