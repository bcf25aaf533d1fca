"""Domain types for cluster-tool scheduling instances and schedules.

An :class:`Instance` holds jobs typed by recipes, machines with speed,
capacity and recipe qualifications, and a recipe-pair interference matrix.
A :class:`Schedule` is one job sequence per machine.

>>> inst = Instance.from_dict({
...     "recipes": [{"id": 0, "base_work": 10, "label": "A"}],
...     "jobs": [{"id": 0, "recipe": 0}, {"id": 1, "recipe": 0}],
...     "machines": [{"id": 0, "speed": 1, "capacity": 2, "qualified": [0]}],
...     "interference": [[0.5]],
... })
>>> inst.L, inst.recipe_counts()
(2, (2,))
>>> count_permutations(4, [2, 2])
6
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CountMismatchError, InstanceError, QualificationError


@dataclass(frozen=True)
class Recipe:
    id: int
    base_work: float
    label: str = ""

    def __post_init__(self):
        if not self.base_work > 0:
            raise InstanceError(f"recipe {self.id}: base_work must be > 0, got {self.base_work}")


@dataclass(frozen=True)
class Job:
    id: int
    recipe_id: int


@dataclass(frozen=True)
class Machine:
    id: int
    speed: float
    capacity: int
    qualified: frozenset[int]

    def __post_init__(self):
        if not self.speed > 0:
            raise InstanceError(f"machine {self.id}: speed must be > 0")
        if int(self.capacity) != self.capacity or self.capacity < 1:
            raise InstanceError(f"machine {self.id}: capacity must be an integer >= 1")
        if not self.qualified:
            raise InstanceError(f"machine {self.id}: qualified set is empty")


@dataclass(frozen=True)
class Instance:
    recipes: tuple[Recipe, ...]
    jobs: tuple[Job, ...]
    machines: tuple[Machine, ...]
    interference: tuple[tuple[float, ...], ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        r = len(self.recipes)
        if r == 0:
            raise InstanceError("instance has no recipes")
        if [rc.id for rc in self.recipes] != list(range(r)):
            raise InstanceError("recipe ids must be dense 0..r-1 in order")
        if not self.jobs:
            raise InstanceError("instance has no jobs")
        if [j.id for j in self.jobs] != list(range(len(self.jobs))):
            raise InstanceError("job ids must be dense 0..L-1 in order")
        if not self.machines:
            raise InstanceError("instance has no machines")
        if [m.id for m in self.machines] != list(range(len(self.machines))):
            raise InstanceError("machine ids must be dense 0..m-1 in order")
        if len(self.interference) != r or any(len(row) != r for row in self.interference):
            raise InstanceError(f"interference must be {r}x{r}")
        for row in self.interference:
            for v in row:
                if not (v >= 0 and math.isfinite(v)):
                    raise InstanceError("interference entries must be finite and >= 0")
        for j in self.jobs:
            if not 0 <= j.recipe_id < r:
                raise InstanceError(f"job {j.id} refers to unknown recipe {j.recipe_id}")
        for m in self.machines:
            if any(not 0 <= q < r for q in m.qualified):
                raise InstanceError(f"machine {m.id} qualified for unknown recipe")
        for rc in self.recipes:
            if not any(rc.id in m.qualified for m in self.machines):
                raise InstanceError(f"recipe {rc.id} has no qualified machine")

    @property
    def L(self) -> int:
        return len(self.jobs)

    def recipe_of(self, job_id: int) -> int:
        return self.jobs[job_id].recipe_id

    def recipe_counts(self) -> tuple[int, ...]:
        c = Counter(j.recipe_id for j in self.jobs)
        return tuple(c.get(i, 0) for i in range(len(self.recipes)))

    def qualified_machines(self, recipe_id: int) -> tuple[int, ...]:
        return self._qualified_by_recipe[recipe_id]

    def is_qualified(self, job_id: int, machine_id: int) -> bool:
        return self.jobs[job_id].recipe_id in self.machines[machine_id].qualified

    @cached_property
    def _qualified_by_recipe(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(m.id for m in self.machines if rc.id in m.qualified) for rc in self.recipes
        )

    @cached_property
    def arrays(self) -> "InstanceArrays":
        return InstanceArrays.build(self)

    # -- JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "recipes": [{"id": r.id, "base_work": r.base_work, "label": r.label} for r in self.recipes],
            "jobs": [{"id": j.id, "recipe": j.recipe_id} for j in self.jobs],
            "machines": [
                {"id": m.id, "speed": m.speed, "capacity": m.capacity, "qualified": sorted(m.qualified)}
                for m in self.machines
            ],
            "interference": [list(row) for row in self.interference],
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "Instance":
        try:
            recipes = tuple(
                Recipe(int(r["id"]), float(r["base_work"]), str(r.get("label", "")))
                for r in data["recipes"]
            )
            jobs = tuple(Job(int(j["id"]), int(j["recipe"])) for j in data["jobs"])
            machines = tuple(
                Machine(int(m["id"]), float(m["speed"]), m["capacity"], frozenset(int(q) for q in m["qualified"]))
                for m in data["machines"]
            )
            interference = tuple(tuple(float(v) for v in row) for row in data["interference"])
        except (KeyError, TypeError) as exc:
            raise InstanceError(f"malformed instance document: {exc!r}") from exc
        recipes = tuple(sorted(recipes, key=lambda r: r.id))
        jobs = tuple(sorted(jobs, key=lambda j: j.id))
        machines = tuple(sorted(machines, key=lambda m: m.id))
        return cls(recipes, jobs, machines, interference, name=name)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def load(cls, path: str | Path) -> "Instance":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), name=path.stem)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass(frozen=True)
class InstanceArrays:
    """Flat numpy views of an instance for the compiled evaluation kernel."""

    job_recipe: np.ndarray
    job_work: np.ndarray
    speeds: np.ndarray
    capacities: np.ndarray
    beta: np.ndarray
    # qualified[m, r] is True when machine m may process recipe r
    qualified: np.ndarray

    @classmethod
    def build(cls, inst: Instance) -> "InstanceArrays":
        r = len(inst.recipes)
        qualified = np.zeros((len(inst.machines), r), dtype=np.bool_)
        for m in inst.machines:
            for q in m.qualified:
                qualified[m.id, q] = True
        return cls(
            job_recipe=np.array([j.recipe_id for j in inst.jobs], dtype=np.int64),
            job_work=np.array([inst.recipes[j.recipe_id].base_work for j in inst.jobs], dtype=np.float64),
            speeds=np.array([m.speed for m in inst.machines], dtype=np.float64),
            capacities=np.array([m.capacity for m in inst.machines], dtype=np.int64),
            beta=np.array(inst.interference, dtype=np.float64).reshape(r, r),
            qualified=qualified,
        )


@dataclass(frozen=True)
class Schedule:
    """One processing sequence (tuple of job ids) per machine, indexed by machine id."""

    sequences: tuple[tuple[int, ...], ...]

    @classmethod
    def of(cls, sequences: Iterable[Iterable[int]]) -> "Schedule":
        return cls(tuple(tuple(int(j) for j in seq) for seq in sequences))

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, machine_id: int) -> tuple[int, ...]:
        return self.sequences[machine_id]

    def concatenated(self) -> tuple[int, ...]:
        return tuple(j for seq in self.sequences for j in seq)

    def machine_of(self) -> dict[int, int]:
        return {j: m for m, seq in enumerate(self.sequences) for j in seq}

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sequences)

    def to_list(self) -> list[list[int]]:
        return [list(s) for s in self.sequences]


def count_permutations(L: int, recipe_counts: Sequence[int]) -> int:
    """Number of distinct job sequences of length ``L``: L! / prod(R_i!)."""
    if any(c < 0 for c in recipe_counts):
        raise CountMismatchError("recipe counts must be non-negative")
    if sum(recipe_counts) != L:
        raise CountMismatchError(f"recipe counts sum to {sum(recipe_counts)}, expected L={L}")
    denom = 1
    for c in recipe_counts:
        denom *= math.factorial(c)
    return math.factorial(L) // denom


def stirling_factorial(L: int) -> float:
    """Stirling's estimate sqrt(2*pi*L) * (L/e)**L of L!."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return math.sqrt(2 * math.pi * L) * (L / math.e) ** L


def validate_schedule(instance: Instance, schedule: Schedule) -> list[str]:
    """Return the violated schedule invariants; an empty list means the schedule is valid."""
    violations: list[str] = []
    if len(schedule.sequences) != len(instance.machines):
        violations.append(
            f"machine count: schedule has {len(schedule.sequences)} sequences, "
            f"instance has {len(instance.machines)} machines"
        )
    seen: dict[int, int] = {}
    for m, seq in enumerate(schedule.sequences):
        for j in seq:
            if not 0 <= j < instance.L:
                violations.append(f"unknown job {j} on machine {m}")
                continue
            if j in seen:
                violations.append(f"duplicate job {j} (machines {seen[j]} and {m})")
            else:
                seen[j] = m
            if m < len(instance.machines) and not instance.is_qualified(j, m):
                violations.append(
                    f"unqualified: job {j} (recipe {instance.recipe_of(j)}) on machine {m}"
                )
    for j in range(instance.L):
        if j not in seen:
            violations.append(f"missing job {j}")
    return violations


def chunk_sizes(n: int, parts: int) -> list[int]:
    """Sizes of ``parts`` contiguous chunks of ``n`` items; earlier chunks take the remainder."""
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def split_sequence(overall: Sequence[int], parts: int) -> list[list[int]]:
    out, start = [], 0
    for size in chunk_sizes(len(overall), parts):
        out.append(list(overall[start:start + size]))
        start += size
    return out


def cut_into_chunks(instance: Instance, overall: Sequence[int]) -> Schedule:
    """Cut an overall job sequence into equisized chunks, one per machine in id order.

    Raises:
        QualificationError: if a chunk lands on a machine that is not qualified
            for one of its jobs; callers fall back to dynamic partitioning.
    """
    if sorted(overall) != list(range(instance.L)):
        raise ValueError("overall sequence must be a permutation of all jobs")
    chunks = split_sequence(overall, len(instance.machines))
    for m, chunk in enumerate(chunks):
        for j in chunk:
            if not instance.is_qualified(j, m):
                raise QualificationError(
                    f"job {j} (recipe {instance.recipe_of(j)}) not qualified on machine {m}"
                )
    return Schedule.of(chunks)
