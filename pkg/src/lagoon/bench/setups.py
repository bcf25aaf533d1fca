"""Test-setup grid and deterministic instance generation.

A :class:`TestSetup` spans the parameter ranges of the original study:
1 to 4 machines (uniform or mixed), 16 to 60 jobs, 3 to 10 recipes and a
budget of 1k, 10k or 100k simulate calls. ``adapted`` setups may go below
16 jobs so the brute-force oracle can solve them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import LagoonError
from ..model import Instance, Job, Machine, Recipe, chunk_sizes

BUDGETS = (1000, 10000, 100000)
SPEEDS = (0.5, 1.0, 2.0)
CAPACITIES = (1, 2, 3)


class SpecOutOfRangeError(LagoonError, ValueError):
    pass


@dataclass(frozen=True)
class TestSetup:
    machines: int
    machine_mix: str
    job_count: int
    recipe_count: int
    interference_seed: int | None = None
    budget: int = 10000
    repetitions: int = 100
    recipe_mix: str = "equal"
    adapted: bool = False
    name: str = ""

    __test__ = False  # not a pytest class

    def validate(self) -> None:
        if not 1 <= self.machines <= 4:
            raise SpecOutOfRangeError(f"machines must be 1..4, got {self.machines}")
        if self.machine_mix not in ("uniform", "mixed"):
            raise SpecOutOfRangeError(f"machine_mix must be uniform or mixed, got {self.machine_mix!r}")
        lo = 2 if self.adapted else 16
        if not lo <= self.job_count <= 60:
            raise SpecOutOfRangeError(f"job_count must be {lo}..60, got {self.job_count}")
        lo = 1 if self.adapted else 3
        if not lo <= self.recipe_count <= 10:
            raise SpecOutOfRangeError(f"recipe_count must be {lo}..10, got {self.recipe_count}")
        if self.recipe_count > self.job_count:
            raise SpecOutOfRangeError("more recipes than jobs")
        if not self.adapted and self.budget not in BUDGETS:
            raise SpecOutOfRangeError(f"budget must be one of {BUDGETS}, got {self.budget}")
        if self.repetitions < 1:
            raise SpecOutOfRangeError("repetitions must be >= 1")
        if self.recipe_mix not in ("equal", "unequal"):
            raise SpecOutOfRangeError(f"recipe_mix must be equal or unequal, got {self.recipe_mix!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TestSetup":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in fields})


def generate_setup(spec: TestSetup, seed: int) -> Instance:
    """Build an instance from ``spec``; identical ``(spec, seed)`` gives an identical instance."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    beta_seed = spec.interference_seed if spec.interference_seed is not None else seed
    beta_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([beta_seed, 1])))
    r, m = spec.recipe_count, spec.machines

    recipes = tuple(
        Recipe(i, float(w), chr(ord("A") + i)) for i, w in enumerate(rng.uniform(5.0, 50.0, size=r))
    )

    if spec.recipe_mix == "equal":
        counts = chunk_sizes(spec.job_count, r)
    else:
        weights = rng.dirichlet(np.full(r, 0.7))
        counts = (1 + rng.multinomial(spec.job_count - r, weights)).tolist()
    labels = [rid for rid, c in enumerate(counts) for _ in range(c)]
    rng.shuffle(labels)
    jobs = tuple(Job(j, int(rid)) for j, rid in enumerate(labels))

    if spec.machine_mix == "uniform":
        machines = tuple(Machine(i, 1.0, 2, frozenset(range(r))) for i in range(m))
    else:
        speeds = rng.choice(SPEEDS, size=m)
        caps = rng.choice(CAPACITIES, size=m)
        qualified = [set(range(r)) for _ in range(m)]
        for rid in range(r):
            k = int(rng.integers(0, m // 2 + 1))
            for mid in rng.choice(m, size=k, replace=False):
                qualified[int(mid)].discard(rid)
        for mid in range(m):
            if not qualified[mid]:
                qualified[mid].add(int(rng.integers(r)))
        machines = tuple(
            Machine(i, float(speeds[i]), int(caps[i]), frozenset(qualified[i])) for i in range(m)
        )

    beta = beta_rng.uniform(0.0, 1.0, size=(r, r))
    interference = tuple(tuple(float(v) for v in row) for row in beta)
    return Instance(recipes, jobs, machines, interference, name=spec.name)


# Fixed corners of the parameter grid. The instance for each comes from
# generate_setup(setup, CANONICAL_SEEDS[name]).
CANONICAL: dict[str, TestSetup] = {
    s.name: s
    for s in (
        TestSetup(1, "uniform", 16, 3, name="single-small"),
        TestSetup(1, "uniform", 40, 6, name="single-large"),
        TestSetup(2, "uniform", 30, 5, name="dual-uniform"),
        TestSetup(4, "uniform", 60, 10, name="quad-uniform"),
        TestSetup(3, "mixed", 36, 4, recipe_mix="unequal", name="mixed-unequal"),
        TestSetup(4, "mixed", 60, 8, name="quad-mixed"),
    )
}
CANONICAL_SEEDS = {name: 1000 + i for i, name in enumerate(CANONICAL)}
MIXED_SETUP = "mixed-unequal"


def canonical_instance(name: str) -> Instance:
    try:
        spec = CANONICAL[name]
    except KeyError:
        raise SpecOutOfRangeError(f"unknown canonical setup {name!r}; known: {sorted(CANONICAL)}") from None
    return generate_setup(spec, CANONICAL_SEEDS[name])
