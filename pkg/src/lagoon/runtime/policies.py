"""Decision rules used by the agents, kept free of threads so they test in isolation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from ..errors import LagoonError
from ..model import Instance
from ..optimizers import DEFAULT_REINIT_LIMIT, meta_params
from .packages import ALL, BEST_OF, DEFAULT_PRIORITY, LoadReport, PackageError, TaskPackage

CC_BUDGET_LIMIT = 5000
STALE_BEATS = 3


class TaskFileError(LagoonError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"parse-error at line {line}: {message}")


# -- controller -----------------------------------------------------------------


def controller_select(task: TaskPackage, instance: Instance,
                      loads: list[LoadReport] | None = None) -> tuple[str, dict]:
    """Pick an algorithm and parameters for a task that does not name one.

    Several machines on a small budget go to Central Complex with derived
    parameters; everything else goes to RDS. ``loads`` is accepted for
    future load-aware choices and does not change the result.
    """
    if task.algorithm:
        return task.algorithm, dict(task.params)
    multi = len(instance.machines) > 1
    if multi and task.budget < CC_BUDGET_LIMIT and task.budget >= 100:
        return "cc", meta_params(instance, task.budget)
    return "rds", {"reinit_limit": DEFAULT_REINIT_LIMIT}


# -- splitter -------------------------------------------------------------------


def split(task: TaskPackage) -> list[TaskPackage]:
    """One single-repetition subtask per seed ``seed .. seed + repetitions - 1``."""
    if task.repetitions == 1:
        return [task]
    return [replace(task, seed=task.seed + i, repetitions=1) for i in range(task.repetitions)]


def reassemble(results: list[dict]) -> dict:
    """Best-of plus the full per-seed list (sorted by seed)."""
    ordered = sorted(results, key=lambda r: r["seed"])
    ok = [r for r in ordered if r.get("status", "ok") == "ok"]
    best = min(ok, key=lambda r: (r["makespan"], r["seed"])) if ok else None
    return {"best": best, "results": ordered}


# -- collector ------------------------------------------------------------------


def collect(evaluation: str, members: dict[str, dict]) -> dict:
    """Combine member results keyed by member task id.

    Each member result is a reassembled record (``{"best": ..., "results": ...}``)
    or a failure (``{"status": "failed", "error": ...}``).
    """
    failures = sorted(tid for tid, r in members.items() if r.get("status", "ok") != "ok" or r.get("best") is None)
    if evaluation == ALL:
        return {"evaluation": ALL, "members": dict(members), "failures": failures}
    if evaluation != BEST_OF:
        raise PackageError(f"unknown evaluation {evaluation!r}")
    ok = {tid: r for tid, r in members.items() if tid not in failures}
    if not ok:
        return {"evaluation": BEST_OF, "best": None, "provenance": None, "failures": failures}
    tid = min(ok, key=lambda t: (ok[t]["best"]["makespan"], t))
    return {"evaluation": BEST_OF, "best": ok[tid]["best"], "provenance": tid, "failures": failures}


# -- load balancing ---------------------------------------------------------------


@dataclass(frozen=True)
class Migration:
    peer: str
    count: int


def fresh_peers(my: LoadReport, peers: list[LoadReport], now: float, heartbeat: float) -> list[LoadReport]:
    return [p for p in peers if p.agent != my.agent and now - p.timestamp <= STALE_BEATS * heartbeat]


def balance(my: LoadReport, peers: list[LoadReport], now: float | None = None,
            heartbeat: float = 1.0) -> list[Migration]:
    """Delegation decisions for an overloaded balancer.

    With more than twice its capacity queued, a balancer hands the excess
    over capacity·2 to peers whose queue is below half their capacity, at
    most the queue difference per peer. Reports older than three heartbeats
    are ignored; ``now=None`` skips the staleness check.
    """
    if now is not None:
        peers = fresh_peers(my, peers, now, heartbeat)
    else:
        peers = [p for p in peers if p.agent != my.agent]
    excess = my.queued_tasks - 2 * my.capacity
    out: list[Migration] = []
    for peer in sorted(peers, key=lambda p: (p.queued_tasks / max(p.capacity, 1), p.agent)):
        if excess <= 0:
            break
        if peer.capacity <= 0 or peer.queued_tasks >= peer.capacity / 2:
            continue
        n = min(excess, my.queued_tasks - peer.queued_tasks)
        if n > 0:
            out.append(Migration(peer.agent, n))
            excess -= n
    return out


def worker_target(capacity: int, queued: int) -> int:
    """Size of the worker pool: never more than capacity, none while idle."""
    return max(0, min(capacity, queued))


# -- task list files --------------------------------------------------------------


def parse_task_file(text: str) -> list[tuple[TaskPackage, int, dict | None]]:
    """Parse a JSON array of task objects into ``(task, priority, output_channel)``.

    Besides the task fields, each object may carry ``priority`` (0..9) and
    ``output`` (an output-channel object). Errors name the offending line.
    """
    if not text.strip():
        return []
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaskFileError(exc.lineno, exc.msg) from None
    if not isinstance(items, list):
        raise TaskFileError(1, "expected a JSON array of tasks")
    lines = _element_lines(text, len(items))
    out = []
    for item, line in zip(items, lines):
        if not isinstance(item, dict):
            raise TaskFileError(line, "task entry must be an object")
        body = dict(item)
        priority = body.pop("priority", DEFAULT_PRIORITY)
        channel = body.pop("output", None)
        try:
            task = TaskPackage.from_dict(body)
            if not isinstance(priority, int) or not 0 <= priority <= 9:
                raise PackageError(f"priority must be an integer 0..9, got {priority!r}")
        except (PackageError, TypeError, ValueError) as exc:
            raise TaskFileError(line, str(exc)) from None
        out.append((task, priority, channel))
    return out


def _element_lines(text: str, count: int) -> list[int]:
    """Line number where each top-level array element starts."""
    lines = []
    depth = 0
    in_str = esc = False
    line = 1
    expecting = False
    for ch in text:
        if ch == "\n":
            line += 1
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
            if expecting:
                lines.append(line)
                expecting = False
            continue
        if ch in "[{":
            if depth == 1 and expecting:
                lines.append(line)
                expecting = False
            depth += 1
            if depth == 1:
                expecting = True
        elif ch in "]}":
            depth -= 1
        elif ch == "," and depth == 1:
            expecting = True
        elif not ch.isspace() and depth == 1 and expecting:
            lines.append(line)
            expecting = False
    return (lines + [line] * count)[:count]
