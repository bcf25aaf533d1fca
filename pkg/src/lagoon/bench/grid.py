"""Experiment grids through the runtime, result tables and the oracle check."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from ..errors import LagoonError, SingleMachineError
from ..model import Instance
from ..optimizers import brute_force, run_optimizer
from ..runtime.packages import ALL, CollectionPackage, TaskPackage

CSV_FIELDS = ("setup", "algorithm", "seed", "best", "evals", "wall_ms")
HEURISTICS = ("mc", "rds", "pso", "cc")


class GridError(LagoonError):
    pass


@dataclass
class ResultRow:
    setup: str
    algorithm: str
    budget: int
    max: float
    mean: float
    min: float
    time: float  # mean wall seconds per run
    runs: int

    def __post_init__(self):
        if not (self.min <= self.mean + 1e-9 and self.mean <= self.max + 1e-9):
            raise ValueError("ResultRow needs min <= mean <= max")


@dataclass
class GridResult:
    rows: list[dict] = field(default_factory=list)
    summary: list[ResultRow] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            self._write(fh)

    def csv_text(self) -> str:
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()

    def _write(self, fh) -> None:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r[k] for k in CSV_FIELDS})

    def table(self) -> str:
        """Summary in the Max | Mean | Min | Time layout, one row per setup and algorithm."""
        head = f"{'setup':<16} {'algorithm':<9} {'budget':>7} {'Max':>10} {'Mean':>10} {'Min':>10} {'Time[s]':>9}"
        lines = [head, "-" * len(head)]
        for r in self.summary:
            lines.append(f"{r.setup:<16} {r.algorithm:<9} {r.budget:>7} {r.max:>10.2f} {r.mean:>10.2f} "
                         f"{r.min:>10.2f} {r.time:>9.3f}")
        return "\n".join(lines)

    def best_by_seed(self, setup: str, algorithm: str) -> dict[int, float]:
        return {r["seed"]: r["best"] for r in self.rows if r["setup"] == setup and r["algorithm"] == algorithm}

    def mean(self, setup: str, algorithm: str) -> float:
        return statistics.fmean(self.best_by_seed(setup, algorithm).values())


def summarize(setup: str, algorithm: str, budget: int, rows: list[dict]) -> ResultRow:
    values = [r["best"] for r in rows]
    return ResultRow(setup, algorithm, budget, max(values), statistics.fmean(values), min(values),
                     statistics.fmean(r["wall_ms"] for r in rows) / 1000.0, len(rows))


def run_grid(
    setups: dict[str, Instance] | Iterable[tuple[str, Instance]],
    algorithms: Iterable[str],
    seed: int = 0,
    repetitions: int = 100,
    budget: int = 10000,
    *,
    runtime=None,
    params: dict[str, dict] | None = None,
    timeout: float | None = None,
    priority: int = 5,
) -> GridResult:
    """Run every (setup, algorithm) pair for seeds ``seed .. seed + repetitions - 1``.

    Each pair goes to the runtime as one task with ``repetitions`` set, so
    the Splitter fans it out over whatever workers are connected. Without a
    ``runtime`` a single-worker in-process runtime is used. Central Complex
    is skipped on single-machine setups.
    """
    from ..runtime.system import LocalRuntime

    pairs = list(setups.items()) if isinstance(setups, dict) else list(setups)
    algorithms = [a.lower() for a in algorithms]
    own = runtime is None
    rt = LocalRuntime(workers=1) if own else runtime
    try:
        jobs = []
        for name, inst in pairs:
            for algo in algorithms:
                if algo == "cc" and len(inst.machines) < 2:
                    continue
                task = TaskPackage(instance=inst.to_dict(), algorithm=algo, params=dict((params or {}).get(algo, {})),
                                   budget=budget, seed=seed, repetitions=repetitions, label=f"{name}/{algo}")
                jobs.append((name, algo, rt.submit(CollectionPackage([task], ALL), priority)))
        deadline = None if timeout is None else time.monotonic() + timeout
        result = GridResult()
        for name, algo, pid in jobs:
            left = None if deadline is None else max(0.0, deadline - time.monotonic())
            payload = rt.wait(pid, left)
            (member,) = payload["members"].values()
            if member.get("status", "ok") != "ok":
                raise GridError(f"{name}/{algo} failed: {member.get('error')}")
            failed = [r for r in member["results"] if r.get("status", "ok") != "ok"]
            if failed:
                raise GridError(f"{name}/{algo}: {len(failed)} runs failed, first: {failed[0].get('error')}")
            rows = [
                {"setup": name, "algorithm": algo, "seed": r["seed"], "best": r["makespan"],
                 "evals": r["evals"], "wall_ms": r["wall_ms"], "node": r.get("node")}
                for r in member["results"]
            ]
            result.rows.extend(rows)
            result.summary.append(summarize(name, algo, budget, rows))
        return result
    finally:
        if own:
            rt.shutdown()


# -- oracle check -------------------------------------------------------------------


@dataclass
class AlgorithmReport:
    algorithm: str
    runs: int
    hits: int
    within_2pct: int
    mean_gap_pct: float
    max_gap_pct: float


@dataclass
class OracleReport:
    optimum: float
    candidates: int
    budget: int
    algorithms: dict[str, AlgorithmReport]

    def to_dict(self) -> dict:
        return {"optimum": self.optimum, "candidates": self.candidates, "budget": self.budget,
                "algorithms": {k: asdict(v) for k, v in self.algorithms.items()}}

    def text(self) -> str:
        lines = [f"optimum {self.optimum:.6f} over {self.candidates} candidates, budget {self.budget}"]
        for r in self.algorithms.values():
            lines.append(f"  {r.algorithm:<4} hits {r.hits}/{r.runs}  within 2% {r.within_2pct}/{r.runs}  "
                         f"gap mean {r.mean_gap_pct:.3f}%  max {r.max_gap_pct:.3f}%")
        return "\n".join(lines)


HIT_RTOL = 1e-9


def oracle_check(
    instance: Instance,
    algorithms: Iterable[str] = HEURISTICS,
    seeds: int = 100,
    budget: int = 10000,
    seed: int = 0,
    limit: int = 10**7,
) -> OracleReport:
    """Exact optimum by enumeration, then each heuristic's hit rate and gaps over ``seeds`` runs.

    Raises:
        SpaceTooLargeError: when the instance is too large to enumerate.
    """
    oracle = brute_force(instance, limit)
    opt = oracle.best_makespan
    reports = {}
    for algo in algorithms:
        values = []
        for s in range(seed, seed + seeds):
            try:
                values.append(run_optimizer(algo, instance, budget, s).best_makespan)
            except SingleMachineError:
                break
        if not values:
            continue
        gaps = [(v - opt) / opt * 100.0 for v in values]
        reports[algo] = AlgorithmReport(
            algo, len(values),
            sum(v <= opt * (1 + HIT_RTOL) for v in values),
            sum(v <= opt * 1.02 + 1e-12 for v in values),
            statistics.fmean(gaps), max(gaps),
        )
    return OracleReport(opt, oracle.stats["candidates"], budget, reports)
