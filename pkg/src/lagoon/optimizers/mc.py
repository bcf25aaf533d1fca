"""Monte Carlo reference: one independent random schedule per simulate call."""

from __future__ import annotations

from ..errors import BudgetError
from ..model import Instance
from ..simulator import Evaluator
from .base import OptRun, RandomStream, Tracker, random_flat


def monte_carlo(instance: Instance, budget: int, seed: int, *, evaluator: Evaluator | None = None) -> OptRun:
    if budget < 1:
        raise BudgetError("monte_carlo needs budget >= 1")
    rng = RandomStream(seed)
    ev = evaluator or Evaluator(instance, budget)
    run = OptRun("mc", budget, seed, {})
    track = Tracker(run, ev)
    while ev.remaining > 0:
        order, bounds = random_flat(instance, rng)
        track.offer(max(ev.evaluate(order, bounds)), order, bounds)
    return track.finish()
