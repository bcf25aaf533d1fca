"""Simulation-based optimizers behind one budget-metered contract."""

from __future__ import annotations

from ..model import Instance
from ..simulator import Evaluator
from .base import (
    OptRun,
    RandomStream,
    random_schedule,
    swap_move,
    transposition_distance,
)
from .brute import brute_force, multiset_permutations, search_space_size
from .cc import central_complex, meta_params
from .mc import monte_carlo
from .pso import pso
from .rds import DEFAULT_REINIT_LIMIT, rds

ALGORITHMS = ("mc", "rds", "pso", "cc", "brute")


def run_optimizer(
    algorithm: str,
    instance: Instance,
    budget: int,
    seed: int,
    params: dict | None = None,
    *,
    evaluator: Evaluator | None = None,
) -> OptRun:
    """Dispatch by algorithm name; ``params`` keys follow each optimizer's keyword names."""
    algorithm = algorithm.lower()
    params = dict(params or {})
    if algorithm == "mc":
        return monte_carlo(instance, budget, seed, evaluator=evaluator)
    if algorithm == "rds":
        return rds(instance, budget, seed, int(params.get("reinit_limit", DEFAULT_REINIT_LIMIT)),
                   evaluator=evaluator)
    if algorithm == "pso":
        return pso(instance, budget, seed, params, evaluator=evaluator)
    if algorithm == "cc":
        return central_complex(instance, budget, seed, params, evaluator=evaluator)
    if algorithm == "brute":
        return brute_force(instance, **params)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


__all__ = [
    "ALGORITHMS",
    "OptRun",
    "RandomStream",
    "brute_force",
    "central_complex",
    "meta_params",
    "monte_carlo",
    "multiset_permutations",
    "pso",
    "random_schedule",
    "rds",
    "run_optimizer",
    "search_space_size",
    "swap_move",
    "transposition_distance",
]
