"""Random Down Swing: stochastic hill climbing over job swaps with reinitialization.

For several machines the overall sequence is cut into equisized chunks, and a
swap may exchange jobs between machines when both end up on qualified
machines. A swap is kept only when it strictly lowers the makespan; ties are
rejected. After ``reinit_limit`` consecutive non-improving evaluations the
search restarts from a fresh random schedule.
"""

from __future__ import annotations

from ..errors import BudgetError
from ..model import Instance, Schedule
from ..simulator import Evaluator, to_flat
from .base import MovePicker, OptRun, RandomStream, Tracker, climb, random_flat

DEFAULT_REINIT_LIMIT = 700


def rds(
    instance: Instance,
    budget: int,
    seed: int,
    reinit_limit: int = DEFAULT_REINIT_LIMIT,
    *,
    initial: Schedule | None = None,
    evaluator: Evaluator | None = None,
) -> OptRun:
    if budget < 1:
        raise BudgetError("rds needs budget >= 1")
    if reinit_limit < 1:
        raise ValueError("reinit_limit must be >= 1")
    rng = RandomStream(seed)
    ev = evaluator or Evaluator(instance, budget)
    run = OptRun("rds", budget, seed, {"reinit_limit": reinit_limit})
    track = Tracker(run, ev)

    order, bounds = to_flat(initial) if initial is not None else random_flat(instance, rng)
    current = ev.evaluate(order, bounds)
    track.offer(max(current), order, bounds)
    _, _, _, stats = climb(
        ev, track, rng, MovePicker(instance), order, bounds, current,
        evals=ev.remaining, reinit_limit=reinit_limit,
        restart=lambda: random_flat(instance, rng),
    )
    run.stats.update(reinits=stats["reinits"], accepted=stats["accepted"])
    return track.finish()
