import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagoon.bench import TestSetup, generate_setup
from lagoon.errors import BudgetExceededError, InvalidScheduleError
from lagoon.model import Schedule
from lagoon.optimizers import random_schedule
from lagoon.optimizers.base import RandomStream
from lagoon.simulator import Evaluator, makespan, simulate, to_flat, to_schedule

from helpers import three_job, tiny


def test_single_job_alone():
    assert simulate(tiny([10], [0]), Schedule.of([[0]])).makespan == pytest.approx(10, abs=1e-9)


def test_concurrent_pair_with_half_interference():
    inst = tiny([10], [0, 0], machines=((1.0, 2),), beta=[[0.5]])
    assert makespan(inst, Schedule.of([[0, 1]])) == pytest.approx(15, abs=1e-9)
    seq = tiny([10], [0, 0], machines=((1.0, 1),), beta=[[0.5]])
    assert makespan(seq, Schedule.of([[0, 1]])) == pytest.approx(20, abs=1e-9)


def test_sequence_dependence():
    inst = three_job()
    assert makespan(inst, Schedule.of([[0, 1, 2]])) == pytest.approx(24, abs=1e-9)
    assert makespan(inst, Schedule.of([[0, 2, 1]])) == pytest.approx(20, abs=1e-9)


def test_trace_invariants():
    res = simulate(three_job(), Schedule.of([[0, 2, 1]]))
    times = [e.time for e in res.trace]
    assert times == sorted(times)
    assert sorted((e.job, e.kind) for e in res.trace) == sorted(
        [(j, k) for j in range(3) for k in ("admit", "finish")])
    assert res.makespan == max(res.completion.values())
    assert res.evaluations == 1
    assert res.trace_csv().splitlines()[0].split(",")[1:] == ["0", "0", "admit"]


def test_invalid_schedule_rejected():
    with pytest.raises(InvalidScheduleError):
        simulate(three_job(), Schedule.of([[0, 1]]))


def _instances():
    return st.builds(
        lambda m, mix, L, r, s: generate_setup(TestSetup(m, mix, L, min(r, L), adapted=True), s),
        st.integers(1, 4), st.sampled_from(["uniform", "mixed"]), st.integers(2, 24),
        st.integers(1, 6), st.integers(0, 10**6),
    )


@given(_instances(), st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_kernel_matches_reference(inst, seed):
    sched = random_schedule(inst, RandomStream(seed))
    ref = simulate(inst, sched)
    order, bounds = to_flat(sched)
    fast = Evaluator(inst, 1).evaluate(order, bounds)
    assert max(fast) == pytest.approx(ref.makespan, rel=1e-12)
    assert fast == pytest.approx(list(ref.machine_makespans), rel=1e-12)


@given(_instances(), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_lower_bounds(inst, seed):
    sched = random_schedule(inst, RandomStream(seed))
    ms = makespan(inst, sched)
    work = [inst.recipes[j.recipe_id].base_work for j in inst.jobs]
    assert ms >= max(work) / max(m.speed for m in inst.machines) - 1e-9
    for m, seq in zip(inst.machines, sched.sequences):
        assert ms >= sum(work[j] for j in seq) / (m.speed * m.capacity) - 1e-9


def test_full_parallelism_without_interference():
    inst = tiny([10, 4, 7], [0, 1, 2, 1], machines=((2.0, 4),))
    assert makespan(inst, Schedule.of([[3, 0, 2, 1]])) == pytest.approx(5.0)


def test_determinism():
    inst = generate_setup(TestSetup(2, "mixed", 20, 4), 7)
    sched = random_schedule(inst, RandomStream(3))
    first = makespan(inst, sched)
    assert all(makespan(inst, sched) == first for _ in range(100))


def test_evaluator_meters_budget():
    inst = three_job()
    order, bounds = to_flat(Schedule.of([[0, 1, 2]]))
    ev = Evaluator(inst, 2)
    ev.evaluate(order, bounds)
    cached = ev.evaluate(order, bounds)
    assert ev.remaining == 0
    with pytest.raises(BudgetExceededError):
        ev.evaluate_partial(order, bounds, cached, [0])


def test_flat_roundtrip():
    s = Schedule.of([[2, 0], [], [1]])
    order, bounds = to_flat(s)
    assert order.tolist() == [2, 0, 1] and bounds.tolist() == [0, 2, 2, 3]
    assert to_schedule(order, bounds) == s
