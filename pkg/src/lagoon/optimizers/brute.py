"""Exhaustive reference optimum for small instances.

Jobs sharing a recipe are interchangeable, so a candidate is a partition
(how many jobs of each recipe go to each qualified machine) together with one
distinct recipe sequence per machine. Machines do not interact, so every
machine's distinct sequences are simulated once per recipe-count vector and
the per-partition optimum is the maximum of the per-machine minima. The
number of candidates covered is still counted exactly and matches
:func:`search_space_size`.

Simulation here uses the reference simulator, not the compiled kernel the
heuristics use, so the oracle does not share their evaluation path.
"""

from __future__ import annotations

import math
from collections.abc import Iterator

from ..errors import SpaceTooLargeError
from ..model import Instance, Schedule
from ..simulator import _simulate_machine
from .base import OptRun

DEFAULT_LIMIT = 10**7


def multiset_permutations(counts: list[int]) -> Iterator[tuple[int, ...]]:
    """Yield each distinct arrangement of a multiset given by per-symbol counts, once."""
    counts = list(counts)
    n = sum(counts)
    prefix: list[int] = []

    def rec():
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for sym, c in enumerate(counts):
            if c:
                counts[sym] -= 1
                prefix.append(sym)
                yield from rec()
                prefix.pop()
                counts[sym] += 1

    yield from rec()


def _compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All ways to write n as an ordered sum of k non-negative parts."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def _partitions(instance: Instance) -> Iterator[list[list[int]]]:
    """Yield per-machine recipe-count vectors for every qualification-respecting partition."""
    counts = instance.recipe_counts()
    r, m = len(counts), len(instance.machines)
    alloc = [[0] * r for _ in range(m)]

    def rec(recipe: int):
        if recipe == r:
            yield [list(row) for row in alloc]
            return
        machines = instance.qualified_machines(recipe)
        for parts in _compositions(counts[recipe], len(machines)):
            for mid, c in zip(machines, parts):
                alloc[mid][recipe] = c
            yield from rec(recipe + 1)
            for mid in machines:
                alloc[mid][recipe] = 0

    yield from rec(0)


def search_space_size(instance: Instance, limit: int | None = None) -> int:
    """Count candidates exactly: sum over partitions of the product of per-machine sequence counts.

    Dynamic programming over recipes keyed by per-machine job totals. Adding
    ``c`` jobs of a new recipe to a machine already holding ``t`` jobs
    multiplies its distinct sequences by ``C(t + c, c)``. Partial sums never
    exceed the final total, so with ``limit`` set the count stops early and
    returns a lower bound as soon as it passes the limit.
    """
    counts = instance.recipe_counts()
    m = len(instance.machines)
    states: dict[tuple[int, ...], int] = {(0,) * m: 1}
    for recipe, n in enumerate(counts):
        machines = instance.qualified_machines(recipe)
        nxt: dict[tuple[int, ...], int] = {}
        for totals, ways in states.items():
            for parts in _compositions(n, len(machines)):
                t = list(totals)
                w = ways
                for mid, c in zip(machines, parts):
                    w *= math.comb(t[mid] + c, c)
                    t[mid] += c
                key = tuple(t)
                nxt[key] = nxt.get(key, 0) + w
        states = nxt
        total = sum(states.values())
        if limit is not None and total > limit:
            return total
    return sum(states.values())


def brute_force(instance: Instance, limit: int = DEFAULT_LIMIT) -> OptRun:
    """Exact optimum by enumeration.

    Raises:
        SpaceTooLargeError: when the candidate count exceeds ``limit``.
    """
    size = search_space_size(instance, limit)
    if size > limit:
        raise SpaceTooLargeError(size, limit)

    run = OptRun("brute", budget=size, seed=0, params={"limit": limit})
    cache: dict[tuple[int, tuple[int, ...]], tuple[float, tuple[int, ...], int]] = {}
    stand_in = _representatives(instance)
    evals = 0
    candidates = 0
    partitions = 0
    best_val = math.inf
    best_alloc = None

    for alloc in _partitions(instance):
        partitions += 1
        per_machine = []
        n_here = 1
        for mid, row in enumerate(alloc):
            key = (mid, tuple(row))
            if key not in cache:
                best_seq, best_ms, n_seq = (), 0.0, 0
                if sum(row):
                    best_ms = math.inf
                    for seq in multiset_permutations(row):
                        ms = _simulate_machine(instance, mid, [stand_in[r] for r in seq], {}, [])
                        n_seq += 1
                        if ms < best_ms:
                            best_ms, best_seq = ms, seq
                else:
                    n_seq = 1
                evals += n_seq if sum(row) else 0
                cache[key] = (best_ms, best_seq, n_seq)
            ms, seq, n_seq = cache[key]
            per_machine.append(ms)
            n_here *= n_seq
        candidates += n_here
        value = max(per_machine)
        if value < best_val:
            best_val = value
            best_alloc = alloc

    sequences = _assign_jobs(instance, [cache[(mid, tuple(row))][1] for mid, row in enumerate(best_alloc)])
    run.best = Schedule.of(sequences)
    run.best_makespan = best_val
    run.evals = evals
    run.history = [(evals, best_val)]
    run.stats = {"candidates": candidates, "predicted": size, "partitions": partitions}
    return run


def _representatives(instance: Instance) -> dict[int, int]:
    # the simulator only looks at recipes, so one job per recipe can stand in for all
    reps: dict[int, int] = {}
    for j in instance.jobs:
        reps.setdefault(j.recipe_id, j.id)
    return reps


def _assign_jobs(instance: Instance, recipe_seqs: list[tuple[int, ...]]) -> list[list[int]]:
    pools: dict[int, list[int]] = {}
    for j in instance.jobs:
        pools.setdefault(j.recipe_id, []).append(j.id)
    for pool in pools.values():
        pool.reverse()
    return [[pools[r].pop() for r in seq] for seq in recipe_seqs]

