"""Shared machinery for the simulation-based optimizers.

All optimizers work on a flat schedule representation: ``order`` is the
concatenation of the machine sequences and ``bounds`` the machine offsets.
Every simulate call goes through an :class:`~lagoon.simulator.Evaluator`,
which meters the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import JobSetMismatchError
from ..model import Instance, Schedule, chunk_sizes, split_sequence
from ..simulator import Evaluator, to_flat, to_schedule

SEED_MAX = 2**64 - 1


class RandomStream:
    """Seeded PCG64 stream with buffered uniform draws.

    Child streams for particles or repetitions come from :meth:`spawn`, so a
    run stays reproducible however its parts are scheduled.
    """

    _BUF = 1024

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self.seed_seq = seed
        else:
            seed = int(seed)
            if not 0 <= seed <= SEED_MAX:
                raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
            self.seed_seq = np.random.SeedSequence(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed_seq))
        self._buf: list[float] = []
        self._i = 0

    def random(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self.gen.random(self._BUF).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        k = int(self.random() * n)
        return k if k < n else n - 1

    def permutation(self, n: int) -> list[int]:
        return self.gen.permutation(n).tolist()

    def spawn(self, n: int) -> list["RandomStream"]:
        return [RandomStream(s) for s in self.seed_seq.spawn(n)]


@dataclass
class OptRun:
    algorithm: str
    budget: int
    seed: int
    params: dict
    best: Schedule | None = None
    best_makespan: float = float("inf")
    history: list[tuple[int, float]] = field(default_factory=list)
    evals: int = 0
    stats: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "budget": self.budget,
            "seed": self.seed,
            "makespan": self.best_makespan,
            "evals": self.evals,
        }


class Tracker:
    """Best-so-far bookkeeping; the history is non-increasing by construction."""

    def __init__(self, run: OptRun, evaluator: Evaluator):
        self.run = run
        self.ev = evaluator
        self.best_order: np.ndarray | None = None
        self.best_bounds: np.ndarray | None = None

    @property
    def best(self) -> float:
        return self.run.best_makespan

    def offer(self, value: float, order: np.ndarray, bounds: np.ndarray) -> bool:
        if value < self.run.best_makespan:
            self.run.best_makespan = value
            self.best_order = order.copy()
            self.best_bounds = bounds.copy()
            self.run.history.append((self.ev.calls, value))
            return True
        return False

    def finish(self) -> OptRun:
        self.run.evals = self.ev.calls
        if self.best_order is not None:
            self.run.best = to_schedule(self.best_order, self.best_bounds)
        return self.run


# -- schedule construction ---------------------------------------------------


def random_schedule(instance: Instance, rng: RandomStream) -> Schedule:
    """Uniformly shuffled overall sequence, cut into equisized chunks.

    Jobs the cut puts on an unqualified machine are moved to a uniformly
    chosen qualified machine and appended to its sequence.
    """
    return to_schedule(*random_flat(instance, rng))


def random_flat(instance: Instance, rng: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """:func:`random_schedule` in flat ``(order, bounds)`` form."""
    perm = rng.gen.permutation(instance.L)
    sizes = chunk_sizes(instance.L, len(instance.machines))
    if _fully_qualified(instance):
        bounds = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=bounds[1:])
        return perm, bounds
    chunks = split_sequence(perm.tolist(), len(instance.machines))
    moved = []
    for m, chunk in enumerate(chunks):
        keep = [j for j in chunk if instance.is_qualified(j, m)]
        if len(keep) != len(chunk):
            moved.extend(j for j in chunk if not instance.is_qualified(j, m))
            chunks[m] = keep
    for j in moved:
        options = instance.qualified_machines(instance.recipe_of(j))
        chunks[options[rng.below(len(options))]].append(j)
    return to_flat(Schedule.of(chunks))


def _fully_qualified(instance: Instance) -> bool:
    return bool(instance.arrays.qualified.all())


def swap_move(seq: Sequence[int], i: int, j: int) -> tuple[int, ...]:
    n = len(seq)
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"swap positions ({i}, {j}) out of range for length {n}")
    out = list(seq)
    out[i], out[j] = out[j], out[i]
    return tuple(out)


def transposition_distance(a: Schedule, b: Schedule) -> int:
    """Position mismatches of the concatenated sequences plus jobs placed on different machines."""
    ca, cb = a.concatenated(), b.concatenated()
    if sorted(ca) != sorted(cb):
        raise JobSetMismatchError("schedules cover different job sets")
    ma, mb = a.machine_of(), b.machine_of()
    return sum(x != y for x, y in zip(ca, cb)) + sum(ma[j] != mb[j] for j in ma)


# -- flat-state helpers --------------------------------------------------------


def relocate(order: np.ndarray, bounds: np.ndarray, pos: int, receiver: int, index: int | None = None):
    """Move the job at ``pos`` to ``receiver`` at ``index`` (default: the end).

    ``index`` counts within the receiver's sequence after the job left its
    donor and is clamped to that length. Returns ``(order, bounds, donor)``.
    """
    donor = int(np.searchsorted(bounds, pos, side="right")) - 1
    job = order[pos]
    rest = np.delete(order, pos)
    b = bounds.copy()
    b[donor + 1:] -= 1
    size = int(b[receiver + 1] - b[receiver])
    at = int(b[receiver]) + (size if index is None else min(index, size))
    b[receiver + 1:] += 1
    return np.insert(rest, at, job), b, donor


def machine_of_jobs(order: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    out = np.empty(len(order), dtype=np.int64)
    out[order] = np.repeat(np.arange(len(bounds) - 1), np.diff(bounds))
    return out


def flat_distance(order_a, bounds_a, order_b, bounds_b) -> int:
    """:func:`transposition_distance` on flat schedules."""
    return int(np.count_nonzero(order_a != order_b)) + int(
        np.count_nonzero(machine_of_jobs(order_a, bounds_a) != machine_of_jobs(order_b, bounds_b))
    )


def positions_to_machine(bounds: np.ndarray) -> list[int]:
    out: list[int] = []
    b = bounds.tolist()
    for m in range(len(b) - 1):
        out.extend([m] * (b[m + 1] - b[m]))
    return out


class MovePicker:
    """Samples uniform swap pairs that keep every job on a qualified machine.

    A cross-machine pair whose jobs are not qualified on each other's machine
    is resampled without costing a simulate call. ``intra_only`` restricts
    the sampler to pairs on the same machine.
    """

    def __init__(self, instance: Instance, intra_only: bool = False):
        self.qual = instance.arrays.qualified.tolist()
        self.recipe = instance.arrays.job_recipe.tolist()
        self.intra_only = intra_only
        self.fully_qualified = all(all(row) for row in self.qual)

    def has_moves(self, order: np.ndarray, pos_machine: list[int]) -> bool:
        n = len(pos_machine)
        if n < 2:
            return False
        sizes: dict[int, int] = {}
        for m in pos_machine:
            sizes[m] = sizes.get(m, 0) + 1
        if any(s >= 2 for s in sizes.values()):
            return True
        if self.intra_only:
            return False
        # every machine holds at most one job: n is tiny, check all pairs
        return any(self.allowed(order, pos_machine, p, q) for p in range(n) for q in range(p + 1, n))

    def allowed(self, order, pos_machine, p: int, q: int) -> bool:
        mp, mq = pos_machine[p], pos_machine[q]
        if mp == mq:
            return True
        if self.intra_only:
            return False
        if self.fully_qualified:
            return True
        return bool(self.qual[mq][self.recipe[order[p]]] and self.qual[mp][self.recipe[order[q]]])

    def pick(self, rng: RandomStream, order, pos_machine) -> tuple[int, int]:
        """Assumes :meth:`has_moves` is true for the current shape."""
        n = len(pos_machine)
        while True:
            p = rng.below(n)
            q = rng.below(n - 1)
            if q >= p:
                q += 1
            if self.allowed(order, pos_machine, p, q):
                return p, q


def climb(
    ev: Evaluator,
    tracker: Tracker,
    rng: RandomStream,
    picker: MovePicker,
    order: np.ndarray,
    bounds: np.ndarray,
    current: list[float],
    evals: int,
    reinit_limit: int | None = None,
    restart=None,
) -> tuple[np.ndarray, np.ndarray, list[float], dict]:
    """Stochastic hill climbing by random swaps, accepting strict improvements only.

    Spends at most ``evals`` simulate calls. With ``reinit_limit`` set, the
    search restarts from ``restart()`` (which returns a fresh flat schedule)
    after that many consecutive non-improving evaluations; the restart
    evaluation counts against the budget and resets the counter.
    """
    stats = {"reinits": 0, "accepted": 0, "stuck": False}
    pos_machine = positions_to_machine(bounds)
    cur_val = max(current)
    fails = 0
    spent = 0
    moves_ok = picker.has_moves(order, pos_machine)
    while spent < evals and ev.remaining > 0:
        if reinit_limit is not None and fails >= reinit_limit:
            order, bounds = restart()
            current = ev.evaluate(order, bounds)
            spent += 1
            cur_val = max(current)
            tracker.offer(cur_val, order, bounds)
            pos_machine = positions_to_machine(bounds)
            moves_ok = picker.has_moves(order, pos_machine)
            stats["reinits"] += 1
            fails = 0
            continue
        if not moves_ok:
            stats["stuck"] = True
            break
        p, q = picker.pick(rng, order, pos_machine)
        mp, mq = pos_machine[p], pos_machine[q]
        order[p], order[q] = order[q], order[p]
        cand = ev.evaluate_partial(order, bounds, current, (mp,) if mp == mq else (mp, mq))
        spent += 1
        cand_val = max(cand)
        if cand_val < cur_val:
            current, cur_val = cand, cand_val
            fails = 0
            stats["accepted"] += 1
            tracker.offer(cur_val, order, bounds)
        else:
            order[p], order[q] = order[q], order[p]
            fails += 1
    stats["spent"] = spent
    return order, bounds, current, stats
