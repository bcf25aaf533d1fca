"""Deterministic discrete-event evaluation of schedules.

Each machine processes its sequence independently. Up to ``capacity`` jobs
are resident at once and are admitted strictly in sequence order. A resident
job of recipe ``a`` progresses at

    speed / (1 + sum(beta[a][recipe(j')] for every other resident j'))

work units per time unit. Rates are piecewise constant between admit and
finish events, so the next event time is exact (no time stepping).

Two implementations share these semantics: :func:`simulate` is the readable
reference that records a full event trace; :func:`machine_makespan` is the
compiled kernel the optimizers call in their inner loops.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BudgetExceededError, InvalidScheduleError
from .model import Instance, Schedule, validate_schedule

# Jobs whose finish times agree to this relative precision finish together.
TIE_RTOL = 1e-12

ADMIT = "admit"
FINISH = "finish"


@dataclass(frozen=True)
class Event:
    time: float
    machine: int
    job: int
    kind: str


@dataclass
class SimResult:
    makespan: float
    completion: dict[int, float]
    trace: list[Event] = field(default_factory=list)
    machine_makespans: tuple[float, ...] = ()
    evaluations: int = 1

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for ev in self.trace:
            w.writerow([repr(ev.time), ev.machine, ev.job, ev.kind])
        return buf.getvalue()


def _simulate_machine(instance: Instance, machine_id: int, seq, completion, trace) -> float:
    machine = instance.machines[machine_id]
    beta = instance.interference
    recipe = [instance.recipe_of(j) for j in seq]
    work = [instance.recipes[r].base_work for r in recipe]
    resident: list[int] = []  # positions into seq
    remaining: dict[int, float] = {}
    t = 0.0
    nxt = 0
    n = len(seq)

    def admit():
        nonlocal nxt
        while len(resident) < machine.capacity and nxt < n:
            resident.append(nxt)
            remaining[nxt] = work[nxt]
            trace.append(Event(t, machine_id, seq[nxt], ADMIT))
            nxt += 1

    admit()
    while resident:
        rates = {}
        for p in resident:
            slow = 0.0
            for q in resident:
                if q != p:
                    slow += beta[recipe[p]][recipe[q]]
            rates[p] = machine.speed / (1.0 + slow)
        finish_in = {p: remaining[p] / rates[p] for p in resident}
        dt = min(finish_in.values())
        t = t + dt
        done = [p for p in resident if finish_in[p] <= dt * (1.0 + TIE_RTOL)]
        for p in resident:
            if p not in done:
                remaining[p] -= rates[p] * dt
        for p in sorted(done, key=lambda p: seq[p]):
            resident.remove(p)
            del remaining[p]
            completion[seq[p]] = t
            trace.append(Event(t, machine_id, seq[p], FINISH))
        admit()
    return t


def simulate(instance: Instance, schedule: Schedule, check: bool = True) -> SimResult:
    """Simulate ``schedule`` on ``instance`` and return makespan, completions and trace.

    Raises:
        InvalidScheduleError: when ``check`` is set and the schedule is invalid.
    """
    if check:
        violations = validate_schedule(instance, schedule)
        if violations:
            raise InvalidScheduleError(violations)
    completion: dict[int, float] = {}
    trace: list[Event] = []
    per_machine = []
    for m, seq in enumerate(schedule.sequences):
        per_machine.append(_simulate_machine(instance, m, seq, completion, trace) if seq else 0.0)
    # machines are independent; merge their traces into one time-ordered log
    trace.sort(key=lambda ev: ev.time)
    return SimResult(
        makespan=max(per_machine),
        completion=completion,
        trace=trace,
        machine_makespans=tuple(per_machine),
    )


def makespan(instance: Instance, schedule: Schedule) -> float:
    return simulate(instance, schedule).makespan


@numba.njit(cache=True)
def machine_makespan(order, start, end, job_recipe, job_work, speed, capacity, beta):
    """Makespan of the job sequence ``order[start:end]`` on one machine."""
    n = end - start
    if n <= 0:
        return 0.0
    res_recipe = np.empty(capacity, dtype=np.int64)
    res_rem = np.empty(capacity, dtype=np.float64)
    rate = np.empty(capacity, dtype=np.float64)
    fin = np.empty(capacity, dtype=np.float64)
    k = 0
    nxt = start
    t = 0.0
    while k < capacity and nxt < end:
        j = order[nxt]
        res_recipe[k] = job_recipe[j]
        res_rem[k] = job_work[j]
        k += 1
        nxt += 1
    while k > 0:
        dt = np.inf
        for p in range(k):
            slow = 0.0
            a = res_recipe[p]
            for q in range(k):
                if q != p:
                    slow += beta[a, res_recipe[q]]
            rate[p] = speed / (1.0 + slow)
            fin[p] = res_rem[p] / rate[p]
            if fin[p] < dt:
                dt = fin[p]
        t = t + dt
        limit = dt * (1.0 + 1e-12)
        w = 0
        for p in range(k):
            if fin[p] > limit:
                res_recipe[w] = res_recipe[p]
                res_rem[w] = res_rem[p] - rate[p] * dt
                w += 1
        k = w
        while k < capacity and nxt < end:
            j = order[nxt]
            res_recipe[k] = job_recipe[j]
            res_rem[k] = job_work[j]
            k += 1
            nxt += 1
    return t


@numba.njit(cache=True)
def all_machine_makespans(order, bounds, job_recipe, job_work, speeds, capacities, beta):
    m = bounds.shape[0] - 1
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        out[i] = machine_makespan(
            order, bounds[i], bounds[i + 1], job_recipe, job_work, speeds[i], capacities[i], beta
        )
    return out


class Evaluator:
    """Metered access to the compiled kernel; one call to :meth:`evaluate` is one simulate call.

    The evaluator works on the flat representation used by the optimizers:
    ``order`` is the concatenation of all machine sequences and ``bounds``
    holds the machine offsets into it (``len(bounds) == machines + 1``).
    Machines not listed in ``touched`` reuse the caller's cached per-machine
    makespans, since a machine's timeline depends only on its own sequence.
    """

    def __init__(self, instance: Instance, budget: int, check: bool = False):
        self.instance = instance
        self.budget = int(budget)
        self.calls = 0
        self.check = check
        a = instance.arrays
        self._recipe = a.job_recipe
        self._work = a.job_work
        self._speeds = a.speeds
        self._caps = a.capacities
        self._beta = a.beta

    @property
    def remaining(self) -> int:
        return self.budget - self.calls

    def _charge(self, order, bounds):
        self.calls += 1
        if self.calls > self.budget:
            raise BudgetExceededError(f"simulate call {self.calls} exceeds budget {self.budget}")
        if self.check:
            sched = to_schedule(order, bounds)
            violations = validate_schedule(self.instance, sched)
            if violations:
                raise InvalidScheduleError(violations)

    def evaluate(self, order: np.ndarray, bounds: np.ndarray) -> list[float]:
        """Charge one call and return the per-machine makespans of the full schedule."""
        self._charge(order, bounds)
        return all_machine_makespans(
            order, bounds, self._recipe, self._work, self._speeds, self._caps, self._beta
        ).tolist()

    def evaluate_partial(self, order, bounds, cached: list[float], touched) -> list[float]:
        """Charge one call; recompute only the machines in ``touched``."""
        self._charge(order, bounds)
        out = list(cached)
        for m in touched:
            out[m] = machine_makespan(
                order, bounds[m], bounds[m + 1], self._recipe, self._work,
                self._speeds[m], self._caps[m], self._beta,
            )
        return out


def to_flat(schedule: Schedule) -> tuple[np.ndarray, np.ndarray]:
    order = np.fromiter(schedule.concatenated(), dtype=np.int64, count=sum(schedule.sizes()))
    bounds = np.zeros(len(schedule.sequences) + 1, dtype=np.int64)
    np.cumsum(schedule.sizes(), out=bounds[1:])
    return order, bounds


def to_schedule(order: np.ndarray, bounds: np.ndarray) -> Schedule:
    ol = order.tolist()
    bl = bounds.tolist()
    return Schedule(tuple(tuple(ol[bl[i]:bl[i + 1]]) for i in range(len(bl) - 1)))
