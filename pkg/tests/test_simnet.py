import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from byzlattice.harness import TrialConfig, run_trial
from byzlattice.simnet import (
    POLICIES,
    TRACE_FIELDS,
    AdversarialScheduler,
    Envelope,
    SimConfig,
    UniformDelayScheduler,
    parse_delay,
)


@given(
    st.integers(1, 12),
    st.sampled_from(POLICIES),
    st.lists(st.integers(0, 4), min_size=1, max_size=80),
    st.integers(0, 2**16),
)
def test_no_message_overtaken_more_than_D_times(D, policy, bursts, seed):
    sched = AdversarialScheduler(random.Random(seed), D, policy, frozenset({1}), frozenset({2}))
    seq = 0
    pending: dict[int, int] = {}  # seq -> times overtaken
    for burst in bursts + [0] * 400:
        for _ in range(burst):
            seq += 1
            sched.push(Envelope(seq, seq % 4, 1, object()))
            pending[seq] = 0
        if not len(sched):
            continue
        env = sched.pop()
        for s in pending:
            if s < env.seq:
                pending[s] += 1
        del pending[env.seq]
        assert all(c <= D for c in pending.values())
    assert not pending and len(sched) == 0
    assert sched.max_deferral <= D


def test_uniform_delay_scheduler_orders_by_deadline():
    sched = UniformDelayScheduler(random.Random(0), 1, 5)
    for i in range(20):
        sched.push(Envelope(i, 1, 2, i))
    got = [sched.pop().seq for _ in range(20)]
    assert sorted(got) == list(range(20))


def test_delay_parsing():
    assert parse_delay("adversarial") == ("adversarial",)
    assert parse_delay("uniform:2,7") == ("uniform", 2, 7)
    for bad in ("uniform:5,1", "poisson"):
        with pytest.raises(ValueError):
            parse_delay(bad)
    with pytest.raises(ValueError):
        SimConfig(D=0)


def test_all_correct_run_terminates():
    r = run_trial(TrialConfig(n=6, t=0, seed=3))
    assert r.terminated and r.drained and r.ok
    assert r.messages == sum(r.messages_by_type.values())
    assert set(r.outputs) == set(range(1, 7))


@pytest.mark.parametrize("variant,n", [("unauth", 6), ("auth", 4)])
def test_same_seed_same_digest(variant, n):
    cfg = TrialConfig(n=n, variant=variant, adversary="equivocator", seed=11)
    assert run_trial(cfg).trace_digest == run_trial(cfg).trace_digest
    other = TrialConfig(n=n, variant=variant, adversary="equivocator", seed=12)
    assert run_trial(other).trace_digest != run_trial(cfg).trace_digest


def test_uniform_delay_model_runs():
    r = run_trial(TrialConfig(n=6, seed=2, adversary="junk_acks", delay="uniform:1,20"))
    assert r.ok and r.policy == "uniform"


def test_trace_jsonl_schema(tmp_path):
    r = run_trial(TrialConfig(n=4, variant="auth", adversary="fake_slave", seed=1), keep_trace=True)
    path = tmp_path / "t.jsonl"
    count = r.trace.write_jsonl(str(path))
    lines = path.read_text().splitlines()
    assert count == len(lines) > 0
    for line in lines[:: max(1, len(lines) // 200)]:
        rec = json.loads(line)
        assert set(rec) == set(TRACE_FIELDS)
        for k, typ in TRACE_FIELDS.items():
            assert type(rec[k]) is typ
        int(rec["digest"], 16)
    sends = sum(1 for line in lines if json.loads(line)["kind"] == "send")
    assert sends == r.messages


def test_channels_deliver_what_was_sent():
    r = run_trial(TrialConfig(n=6, adversary="junk_acks", seed=5), keep_trace=True)
    sent: dict[int, tuple] = {}
    for t, kind, src, dst, msg, mid in r.trace.net:
        if kind == "send":
            sent[mid] = (src, dst, msg)
        else:
            assert sent.pop(mid) == (src, dst, msg)
    assert not sent
