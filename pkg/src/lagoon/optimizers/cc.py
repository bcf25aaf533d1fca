"""Central Complex: alternating per-machine sequencing and dynamic partitioning.

Each reinitialization starts from a random partition. Rounds of hill climbing
restricted to intra-machine swaps improve the sequences; between rounds one
random job moves from the machine with the highest makespan to the one with
the lowest, provided the receiver is qualified for it.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import BudgetError, SingleMachineError
from ..model import Instance
from ..simulator import Evaluator
from .base import MovePicker, OptRun, RandomStream, Tracker, climb, random_flat, relocate


def meta_params(instance: Instance, budget: int) -> dict:
    """Derive reinitialization count and per-reinit RDS budget from the total budget."""
    if budget < 100:
        raise BudgetError(f"meta_params needs budget >= 100, got {budget}")
    reinits = min(10, max(2, math.floor(math.sqrt(budget) / 10 + 0.5)))
    rds_iters = budget // reinits - 1
    return {
        "reinits": reinits,
        "rds_iters": rds_iters,
        "shift_interval": default_shift_interval(instance, rds_iters),
    }


def default_shift_interval(instance: Instance, rds_iters: int) -> int:
    # short rounds: partition balance matters more than polishing sequences
    return max(1, min(max(5, instance.L // 4), rds_iters // 8))


def shift_job(order: np.ndarray, bounds: np.ndarray, job_pos: int, receiver: int):
    """Move the job at ``job_pos`` to the end of ``receiver``'s sequence."""
    order, bounds, _ = relocate(order, bounds, job_pos, receiver)
    return order, bounds


def pick_shift(instance: Instance, rng: RandomStream, order, bounds, machines: list[float]):
    """Return ``(donor, receiver, position)`` for the next shift, or None when stuck."""
    donor = max(range(len(machines)), key=lambda m: (machines[m], -m))
    receiver = min(range(len(machines)), key=lambda m: (machines[m], m))
    if donor == receiver:
        return None
    lo, hi = int(bounds[donor]), int(bounds[donor + 1])
    size = hi - lo
    for _ in range(size):
        pos = lo + rng.below(size)
        if instance.is_qualified(int(order[pos]), receiver):
            return donor, receiver, pos
    return None


def central_complex(
    instance: Instance,
    budget: int,
    seed: int,
    params: dict | None = None,
    *,
    evaluator: Evaluator | None = None,
) -> OptRun:
    if len(instance.machines) < 2:
        raise SingleMachineError("central_complex needs >= 2 machines; use rds")
    p = dict(params or {})
    if "reinits" not in p or "rds_iters" not in p:
        p = {**meta_params(instance, budget), **p}
    reinits, rds_iters = int(p["reinits"]), int(p["rds_iters"])
    p.setdefault("shift_interval", default_shift_interval(instance, rds_iters))
    interval = int(p["shift_interval"])
    if reinits < 1 or rds_iters < 0 or interval < 1:
        raise ValueError("reinits >= 1, rds_iters >= 0 and shift_interval >= 1 required")
    if budget < reinits * (rds_iters + 1):
        raise BudgetError(
            f"budget {budget} < reinits*(rds_iters+1) = {reinits * (rds_iters + 1)}"
        )

    rng = RandomStream(seed)
    ev = evaluator or Evaluator(instance, budget)
    run = OptRun("cc", budget, seed, p)
    track = Tracker(run, ev)
    picker = MovePicker(instance, intra_only=True)
    shifts = 0
    stalls = 0

    for r in range(reinits):
        # the last reinitialization also takes any budget left over by rounding
        share = rds_iters + 1 if r < reinits - 1 else ev.remaining
        share = min(share, ev.remaining)
        if share <= 0:
            break
        order, bounds = random_flat(instance, rng)
        machines = ev.evaluate(order, bounds)
        track.offer(max(machines), order, bounds)
        used = 1
        while used < share:
            order, bounds, machines, st = climb(
                ev, track, rng, picker, order, bounds, machines,
                evals=min(interval, share - used),
            )
            used += st["spent"]
            if used >= share:
                break
            move = pick_shift(instance, rng, order, bounds, machines)
            if move is None:
                stalls += 1
                break
            donor, receiver, pos = move
            order, bounds = shift_job(order, bounds, pos, receiver)
            machines = ev.evaluate_partial(order, bounds, machines, (donor, receiver))
            used += 1
            shifts += 1
            track.offer(max(machines), order, bounds)
    run.stats.update(shifts=shifts, stalls=stalls)
    return track.finish()
