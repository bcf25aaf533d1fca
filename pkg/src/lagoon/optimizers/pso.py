"""Discrete particle swarm over job sequences, with pseudo particles.

A particle's position is a valid schedule and a move is a single swap of two
jobs. Each step a particle draws one of three rules by weight:

* random: one uniform qualified swap;
* local: one swap that puts a job where the particle's personal best has it;
* global: the same toward the swarm's global best.

A "toward" swap is chosen uniformly among the mismatched positions whose fix
strictly lowers :func:`~lagoon.optimizers.base.transposition_distance` to the
target and keeps qualifications; when none exists (e.g. the particle already
sits on the target) the particle makes a random move instead.

Swaps never change how many jobs each machine holds, so on several machines
the swarm also relocates jobs. A random step is a relocation (one job to a
random place on another qualified machine) with probability
``relocate_share``. While a particle's machine loads differ from its
target's, a toward step first tries to relocate one job to the machine and
index it has in the target, again only if that strictly lowers the distance.

Pseudo particles do not follow these rules. Once per swarm iteration each one
runs a short hill climb starting at the current global best and publishes its
result back as a candidate global best.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BudgetError
from ..model import Instance
from ..simulator import Evaluator
from .base import (
    MovePicker,
    OptRun,
    RandomStream,
    Tracker,
    climb,
    flat_distance,
    positions_to_machine,
    random_flat,
    relocate,
)

DEFAULTS = {
    "swarm_size": 20,
    "w_random": 0.2,
    "w_local": 0.4,
    "w_global": 0.4,
    "pseudo_count": 2,
    "pseudo_local_budget": 50,
    "relocate_share": 0.5,
}

RANDOM, LOCAL, GLOBAL = "random", "local", "global"


@dataclass
class Position:
    order: np.ndarray
    bounds: np.ndarray
    machines: list[float]

    @property
    def value(self) -> float:
        return max(self.machines)

    def copy(self) -> "Position":
        return Position(self.order.copy(), self.bounds.copy(), list(self.machines))


@dataclass
class Particle:
    position: Position
    personal_best: Position
    rng: RandomStream
    is_pseudo: bool = False
    local_optimizer: dict | None = None
    # move chosen for the latest step: a swap pair or a Relocation
    velocity: list = field(default_factory=list)
    pos_machine: list[int] = field(default_factory=list)


class _Target:
    """Lookup tables for moving toward one reference position."""

    def __init__(self, pos: Position):
        self.pos = pos
        self.order = pos.order.tolist()
        pm = positions_to_machine(pos.bounds)
        self.machine_of_job = {j: pm[p] for p, j in enumerate(self.order)}
        starts = pos.bounds.tolist()
        self.index_of_job = {j: p - starts[pm[p]] for p, j in enumerate(self.order)}
        self.sizes = np.diff(pos.bounds)


@dataclass
class Relocation:
    pos: int
    receiver: int
    index: int | None = None


def toward_move(particle: Particle, target: _Target, picker: MovePicker) -> tuple[int, int] | None:
    """Pick a swap that fixes one mismatched position and strictly reduces the distance."""
    xl = particle.position.order.tolist()
    tl = target.order
    pm = particle.pos_machine
    tm = target.machine_of_job
    where = {j: p for p, j in enumerate(xl)}
    options = []
    for p, (have, want) in enumerate(zip(xl, tl)):
        if have == want:
            continue
        q = where[want]
        mp, mq = pm[p], pm[q]
        delta = -2 + (have != tl[q])
        if mp != mq:
            if not picker.allowed(xl, pm, p, q):
                continue
            delta += (mp != tm[want]) - (mq != tm[want])
            delta += (mq != tm[have]) - (mp != tm[have])
        if delta < 0:
            options.append((p, q))
    if not options:
        return None
    return options[particle.rng.below(len(options))]


def toward_relocation(particle: Particle, target: _Target) -> Relocation | None:
    """When machine loads differ from the target's, move one job to its target slot.

    Candidates are the jobs on a different machine than in the target, tried
    in random order; the first whose relocation strictly lowers the distance
    is taken, which makes the choice uniform among the reducing ones. Each
    candidate tries its target index and then the receiver edge facing the
    donor, which shifts a machine boundary without disturbing the flat order.
    """
    pos = particle.position
    if np.array_equal(np.diff(pos.bounds), target.sizes):
        return None
    pm = particle.pos_machine
    xl = pos.order.tolist()
    tm = target.machine_of_job
    mismatched = [p for p, j in enumerate(xl) if pm[p] != tm[j]]
    before = flat_distance(pos.order, pos.bounds, target.pos.order, target.pos.bounds)
    for k in particle.rng.permutation(len(mismatched)):
        p = mismatched[k]
        job = xl[p]
        receiver = tm[job]
        edge = 0 if receiver > pm[p] else int(pos.bounds[receiver + 1] - pos.bounds[receiver])
        for index in dict.fromkeys((target.index_of_job[job], edge)):
            order, bounds, _ = relocate(pos.order, pos.bounds, p, receiver, index)
            if flat_distance(order, bounds, target.pos.order, target.pos.bounds) < before:
                return Relocation(p, receiver, index)
    return None


def random_relocation(particle: Particle, instance: Instance) -> Relocation | None:
    pos = particle.position
    pm = particle.pos_machine
    n_machines = len(pos.bounds) - 1
    rng = particle.rng
    for _ in range(len(pm)):
        p = rng.below(len(pm))
        job = int(pos.order[p])
        options = [m for m in instance.qualified_machines(instance.recipe_of(job)) if m != pm[p]]
        if options:
            receiver = options[rng.below(len(options))]
            size = int(pos.bounds[receiver + 1] - pos.bounds[receiver])
            return Relocation(p, receiver, rng.below(size + 1))
    return None


def _draw_rule(rng: RandomStream, weights: tuple[float, float, float]) -> str:
    u = rng.random() * sum(weights)
    if u < weights[0]:
        return RANDOM
    if u < weights[0] + weights[1]:
        return LOCAL
    return GLOBAL


def pso(
    instance: Instance,
    budget: int,
    seed: int,
    params: dict | None = None,
    *,
    evaluator: Evaluator | None = None,
) -> OptRun:
    p = {**DEFAULTS, **(params or {})}
    unknown = set(p) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown pso params: {sorted(unknown)}")
    swarm_size = int(p["swarm_size"])
    if swarm_size < 1:
        raise ValueError("swarm_size must be >= 1")
    if budget < swarm_size:
        raise BudgetError(f"pso needs budget >= swarm_size ({swarm_size}), got {budget}")
    weights = (float(p["w_random"]), float(p["w_local"]), float(p["w_global"]))
    if min(weights) < 0 or sum(weights) <= 0:
        raise ValueError("rule weights must be non-negative and not all zero")
    pseudo_count = int(p["pseudo_count"])
    pseudo_budget = int(p["pseudo_local_budget"])
    share = float(p["relocate_share"])
    if not 0.0 <= share <= 1.0:
        raise ValueError("relocate_share must lie in [0, 1]")
    if len(instance.machines) < 2:
        share = 0.0

    root = RandomStream(seed)
    streams = root.spawn(swarm_size + pseudo_count)
    ev = evaluator or Evaluator(instance, budget)
    run = OptRun("pso", budget, seed, p)
    track = Tracker(run, ev)
    picker = MovePicker(instance)

    swarm: list[Particle] = []
    gbest: Position | None = None
    for i in range(swarm_size):
        rng = streams[i]
        order, bounds = random_flat(instance, rng)
        pos = Position(order, bounds, ev.evaluate(order, bounds))
        part = Particle(pos, pos.copy(), rng, pos_machine=positions_to_machine(bounds))
        swarm.append(part)
        track.offer(pos.value, order, bounds)
        if gbest is None or pos.value < gbest.value:
            gbest = pos.copy()
    pseudos = [
        Particle(gbest.copy(), gbest.copy(), streams[swarm_size + k], is_pseudo=True,
                 local_optimizer={"algorithm": "rds", "evals": pseudo_budget})
        for k in range(pseudo_count)
    ]

    iterations = 0
    while ev.remaining > 0:
        moved = False
        g_target = _Target(gbest)
        for part in swarm:
            if ev.remaining <= 0:
                break
            rule = _draw_rule(part.rng, weights)
            move = None
            if rule != RANDOM:
                target = g_target if rule == GLOBAL else _Target(part.personal_best)
                if share > 0.0:
                    move = toward_relocation(part, target)
                if move is None:
                    move = toward_move(part, target, picker)
            if move is None and share > 0.0 and part.rng.random() < share:
                move = random_relocation(part, instance)
            if move is None:
                if not picker.has_moves(part.position.order, part.pos_machine):
                    continue
                move = picker.pick(part.rng, part.position.order, part.pos_machine)
            part.velocity = [move]
            pos = part.position
            if isinstance(move, Relocation):
                pos.order, pos.bounds, donor = relocate(pos.order, pos.bounds, move.pos, move.receiver, move.index)
                part.pos_machine = positions_to_machine(pos.bounds)
                touched = (donor,) if donor == move.receiver else (donor, move.receiver)
            else:
                a, b = move
                pos.order[a], pos.order[b] = pos.order[b], pos.order[a]
                ma, mb = part.pos_machine[a], part.pos_machine[b]
                touched = (ma,) if ma == mb else (ma, mb)
            pos.machines = ev.evaluate_partial(pos.order, pos.bounds, pos.machines, touched)
            moved = True
            if pos.value < part.personal_best.value:
                part.personal_best = pos.copy()
            if pos.value < gbest.value:
                gbest = pos.copy()
                g_target = _Target(gbest)
            track.offer(pos.value, pos.order, pos.bounds)
        for pseudo in pseudos:
            if ev.remaining <= 0:
                break
            start = gbest.copy()
            order, bounds, machines, _ = climb(
                ev, track, pseudo.rng, picker, start.order, start.bounds, start.machines,
                evals=min(pseudo_budget, ev.remaining),
            )
            pseudo.position = Position(order, bounds, machines)
            if pseudo.position.value < pseudo.personal_best.value:
                pseudo.personal_best = pseudo.position.copy()
            if pseudo.position.value < gbest.value:
                gbest = pseudo.position.copy()
            moved = True
        iterations += 1
        if not moved:
            break
    run.stats["iterations"] = iterations
    return track.finish()

