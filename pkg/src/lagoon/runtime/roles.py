"""The agent roles.

Flow of a job: TaskContractor (or any client) -> Collector -> Controller ->
Splitter -> LoadBalancer -> Worker, then results travel back Worker ->
LoadBalancer -> Splitter -> Collector -> Answer.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import threading
import time
from pathlib import Path

from ..optimizers import run_optimizer
from ..optimizers.base import RandomStream, random_flat
from ..simulator import Evaluator, to_schedule
from .agent import Agent
from .node import Node
from .packages import (
    ALL,
    BEST_OF,
    CANCEL_TASK,
    COLLECTION,
    CONTROL,
    RESULT,
    TASK,
    CollectionPackage,
    ControlPackage,
    Envelope,
    LoadReport,
    PackageError,
    TaskPackage,
    control_envelope,
    role_address,
    task_envelope,
)
from .policies import balance, collect, controller_select, parse_task_file, reassemble, split

log = logging.getLogger(__name__)

ANSWER_RETRIES = 3


def _first(node: Node, role: str) -> str | None:
    found = node.lookup(role)
    return found[0].name if found else None


# -- server side ------------------------------------------------------------------


class Server(Agent):
    """Stands for the server node; answers status requests with a registry snapshot."""

    role = "Server"

    def status(self) -> dict:
        out = super().status()
        out["registry"] = [a.to_dict() for a in self.node.registry.all()]
        return out


class TaskContractor(Agent):
    """Loads a task list file, submits every task to the Collector, then terminates.

    Parsing happens before anything is sent, so a malformed file submits
    nothing; the error is kept in :attr:`error`.
    """

    role = "TaskContractor"

    def __init__(self, node: Node, name: str, source: str | Path, output_channel: dict | None = None):
        super().__init__(node, name)
        self.source = Path(source)
        self.output_channel = output_channel
        self.submitted: list[str] = []
        self.error: Exception | None = None
        self.done = threading.Event()

    def on_start(self) -> None:
        self.notify(("contract",))

    def on_event(self, event: tuple) -> None:
        if event[0] != "contract":
            return
        try:
            entries = parse_task_file(self.source.read_text())
            collector = _first(self.node, "Collector")
            if entries and collector is None:
                raise PackageError("no Collector registered")
            envs = [task_envelope(task, priority=prio, output_channel=chan or self.output_channel)
                    for task, prio, chan in entries]
        except Exception as exc:
            self.error = exc
        else:
            for env in envs:
                self.trace(env, "contracted")
                self.send(env, collector)
                self.submitted.append(env.id)
        self.done.set()
        self.stop()


class Collector(Agent):
    """Owns top-level packages: fans collections out, gathers member results."""

    role = "Collector"

    def __init__(self, node: Node, name: str):
        super().__init__(node, name)
        self.collections: dict[str, dict] = {}
        self.member_of: dict[str, str] = {}

    def on_control(self, ctl: ControlPackage, env: Envelope) -> None:
        if ctl.command == CANCEL_TASK:
            self.notify(("cancel", ctl.cancel_id))

    def handle(self, env: Envelope) -> None:
        if env.kind == TASK:
            self._open(env, {env.id: env.payload["task"]}, BEST_OF)
        elif env.kind == COLLECTION:
            coll = CollectionPackage.from_dict(env.payload["collection"])
            members = {}
            for task in coll.tasks:
                members[Envelope(TASK, {}).id] = task.to_dict()
            self._open(env, members, coll.evaluation)
        elif env.kind == RESULT and env.payload.get("type") == "task-result":
            self._member_done(env)

    def _open(self, env: Envelope, members: dict[str, dict], evaluation: str) -> None:
        controller = _first(self.node, "Controller")
        state = {
            "evaluation": evaluation,
            "channel": env.output_channel,
            "priority": env.priority,
            "results": {},
            "pending": set(members),
            "trace": env.trace,
        }
        self.collections[env.id] = state
        self.trace(env, f"collection of {len(members)} ({evaluation})")
        for mid, task in members.items():
            self.member_of[mid] = env.id
            member = Envelope(TASK, {"task": task, "collection": env.id, "reply_to": self.name},
                              env.priority, env.output_channel, id=mid)
            member.trace = list(env.trace)
            if controller is None or not self.send(member, controller):
                self._record(env.id, mid, {"status": "failed", "error": "no Controller reachable"})

    def _member_done(self, env: Envelope) -> None:
        p = env.payload
        mid = p["task_id"]
        cid = self.member_of.get(mid)
        if cid is None or cid not in self.collections:
            self.trace(env, "duplicate or stale member result ignored")
            return
        self._record(cid, mid, {k: v for k, v in p.items() if k not in ("type", "task_id")})

    def _record(self, cid: str, mid: str, result: dict) -> None:
        state = self.collections[cid]
        if mid not in state["pending"]:
            return
        state["pending"].discard(mid)
        state["results"][mid] = result
        self.member_of.pop(mid, None)
        if result.get("status", "ok") != "ok":
            state["trace"].append([time.time(), self.name, f"member {mid} failed: {result.get('error')}"])
        if not state["pending"]:
            self._finish(cid)

    def _finish(self, cid: str, status: str = "ok") -> None:
        state = self.collections.pop(cid)
        summary = collect(state["evaluation"], state["results"])
        out = Envelope(RESULT, {"type": "collection-result", "task_id": cid, "status": status, **summary},
                       state["priority"], state["channel"])
        out.trace = state["trace"]
        for f in summary["failures"]:
            self.trace(out, f"failure noted: {f}")
        answer = _first(self.node, "Answer")
        self.trace(out, "collected")
        if answer is None or not self.send(out, answer):
            log.error("collection %s finished but no Answer agent is reachable", cid)

    def on_event(self, event: tuple) -> None:
        if event[0] != "cancel":
            return
        cid = event[1]
        if cid in self.member_of:
            cid = self.member_of[cid]
        state = self.collections.get(cid)
        if state is None:
            return
        splitter = _first(self.node, "Splitter")
        for mid in list(state["pending"]):
            self.member_of.pop(mid, None)
            if splitter is not None:
                self.send(control_envelope(ControlPackage(CANCEL_TASK, {"type": "package", "id": mid})), splitter)
            state["results"][mid] = {"status": "cancelled", "error": "cancelled"}
        state["pending"].clear()
        self._finish(cid, status="cancelled")


class Controller(Agent):
    """Fills in algorithm and parameters for tasks that leave them open."""

    role = "Controller"

    def handle(self, env: Envelope) -> None:
        if env.kind != TASK:
            return
        try:
            task = TaskPackage.from_dict(env.payload["task"])
            instance = task.resolve_instance()
            algorithm, params = controller_select(task, instance)
        except Exception as exc:
            self._fail(env, f"{type(exc).__name__}: {exc}")
            return
        if not task.algorithm:
            self.trace(env, f"selected {algorithm} {params}")
        task.algorithm, task.params = algorithm, params
        env.payload["task"] = task.to_dict()
        splitter = _first(self.node, "Splitter")
        if splitter is None or not self.send(env, splitter):
            self._fail(env, "no Splitter reachable")

    def _fail(self, env: Envelope, error: str) -> None:
        out = Envelope(RESULT, {"type": "task-result", "task_id": env.id, "status": "failed", "error": error},
                       env.priority, env.output_channel)
        self.send(out, env.payload.get("reply_to") or _first(self.node, "Collector"))


class Splitter(Agent):
    """Splits a task into per-seed subtasks, tracks them in a ledger, reassembles.

    Every subtask stays in the ledger until its result arrives. When its
    load balancer leaves the registry (node failure), the subtask is sent to
    another balancer once; with none available it is parked until one
    registers. Results are deduplicated by subtask id, first one wins.
    """

    role = "Splitter"
    watch_registry = True

    def __init__(self, node: Node, name: str):
        super().__init__(node, name)
        self.jobs: dict[str, dict] = {}
        self.ledger: dict[str, dict] = {}
        self.parked: list[str] = []
        self.load: dict[str, int] = {}
        self.duplicates = 0
        self.resubmissions = 0

    def on_control(self, ctl: ControlPackage, env: Envelope) -> None:
        if ctl.command == CANCEL_TASK:
            self.notify(("cancel", ctl.cancel_id))

    def handle(self, env: Envelope) -> None:
        if env.kind == TASK:
            self._split(env)
        elif env.kind == RESULT:
            kind = env.payload.get("type")
            if kind == "subtask-result":
                self._subtask_done(env)
            elif kind == "redirect":
                self._redirect(env)

    def _split(self, env: Envelope) -> None:
        task = TaskPackage.from_dict(env.payload["task"])
        subs = split(task)
        self.jobs[env.id] = {
            "reply_to": env.payload.get("reply_to") or _first(self.node, "Collector"),
            "priority": env.priority,
            "channel": env.output_channel,
            "expected": len(subs),
            "results": [],
        }
        self.trace(env, f"split into {len(subs)}")
        for sub in subs:
            sub_env = Envelope(TASK, {"task": sub.to_dict(), "parent": env.id, "reply_to": self.name},
                               env.priority, env.output_channel)
            self.ledger[sub_env.id] = {"env": sub_env, "assignee": None, "parent": env.id}
            self._dispatch(sub_env.id)

    def _balancers(self) -> list:
        return self.node.lookup("LoadBalancer")

    def _assign(self, entry: dict, lb: str | None) -> None:
        old = entry["assignee"]
        if old is not None:
            self.load[old] -= 1
            if not self.load[old]:
                del self.load[old]
        entry["assignee"] = lb
        if lb is not None:
            self.load[lb] = self.load.get(lb, 0) + 1

    def _dispatch(self, sub_id: str) -> None:
        entry = self.ledger[sub_id]
        self._assign(entry, None)
        options = self._balancers()
        while options:
            lb = min(options, key=lambda a: (self.load.get(a.name, 0) / max(1, int(a.info.get("capacity", 1))),
                                             a.name))
            self._assign(entry, lb.name)
            if self.send(entry["env"].copy(), lb.name):
                return
            self._assign(entry, None)
            options = [a for a in options if a.name != lb.name]
        if sub_id not in self.parked:
            self.parked.append(sub_id)

    def _subtask_done(self, env: Envelope) -> None:
        sub_id = env.payload["task_id"]
        entry = self.ledger.pop(sub_id, None)
        if entry is not None:
            self._assign(entry, None)
        else:
            self.duplicates += 1
            self.trace(env, f"duplicate result for {sub_id} suppressed")
            return
        if sub_id in self.parked:
            self.parked.remove(sub_id)
        job = self.jobs.get(entry["parent"])
        if job is None:
            return
        result = {k: v for k, v in env.payload.items() if k not in ("type", "task_id", "reply_to")}
        job["results"].append(result)
        if len(job["results"]) == job["expected"]:
            del self.jobs[entry["parent"]]
            out = Envelope(RESULT, {"type": "task-result", "task_id": entry["parent"], "status": "ok",
                                    **reassemble(job["results"])}, job["priority"], job["channel"])
            self.trace(out, "reassembled")
            self.send(out, job["reply_to"])

    def _redirect(self, env: Envelope) -> None:
        sub_id, to = env.payload["task_id"], env.payload["to"]
        entry = self.ledger.get(sub_id)
        if entry is None or entry["assignee"] != env.sender:
            return
        self._assign(entry, to)
        self.trace(entry["env"], f"delegated from {env.sender} to {to}")
        if not self.send(entry["env"].copy(), to):
            self._dispatch(sub_id)

    def reassign_orphans(self) -> int:
        live = {a.name for a in self._balancers()}
        moved = 0
        for sub_id, entry in list(self.ledger.items()):
            if entry["assignee"] is not None and entry["assignee"] not in live:
                gone = entry["assignee"]
                self._assign(entry, None)
                self.resubmissions += 1
                moved += 1
                self.trace(entry["env"], f"resubmitted after loss of {gone}")
                self._dispatch(sub_id)
        return moved

    def _unpark(self) -> None:
        parked, self.parked = self.parked, []
        for sub_id in parked:
            if sub_id in self.ledger:
                self._dispatch(sub_id)

    def on_event(self, event: tuple) -> None:
        if event[0] == "registry":
            _, change, agents = event
            if not any(a.role == "LoadBalancer" for a in agents):
                return
            if change == "left":
                self.reassign_orphans()
            self._unpark()
        elif event[0] == "cancel":
            self._cancel(event[1])

    def _cancel(self, parent: str | None) -> None:
        if parent not in self.jobs:
            return
        del self.jobs[parent]
        for sub_id, entry in list(self.ledger.items()):
            if entry["parent"] == parent:
                del self.ledger[sub_id]
                lb = entry["assignee"]
                self._assign(entry, None)
                if lb:
                    self.send(control_envelope(ControlPackage(CANCEL_TASK, {"type": "package", "id": sub_id})), lb)
        self.parked = [s for s in self.parked if s in self.ledger]

    def tick(self) -> None:
        # orphans are reassigned on the registry event only: that event is
        # queued behind any result the lost node delivered before leaving
        if self.parked:
            self._unpark()

    def status(self) -> dict:
        out = super().status()
        out.update(outstanding=len(self.ledger), parked=len(self.parked),
                   duplicates=self.duplicates, resubmissions=self.resubmissions)
        return out


_FILE_LOCKS: dict[str, threading.Lock] = {}
_FILE_LOCKS_GUARD = threading.Lock()


def _file_lock(path: str) -> threading.Lock:
    with _FILE_LOCKS_GUARD:
        return _FILE_LOCKS.setdefault(str(Path(path).resolve()), threading.Lock())


def answer_lines(payload: dict) -> list[dict]:
    """Result lines for a finished collection: one for BestOf, one per member for All."""

    def line(tid: str, best: dict | None, error: str | None = None) -> dict:
        best = best or {}
        out = {"id": tid, "algorithm": best.get("algorithm"), "makespan": best.get("makespan"),
               "seed": best.get("seed"), "evals": best.get("evals"), "wall_ms": best.get("wall_ms"),
               "node": best.get("node")}
        if error:
            out["error"] = error
        return out

    if payload.get("evaluation") == ALL:
        return [line(mid, m.get("best"), m.get("error")) for mid, m in payload["members"].items()]
    err = None if payload.get("best") else ("; ".join(payload.get("failures", [])) or payload.get("status"))
    return [line(payload["task_id"], payload.get("best"), err)]


class Answer(Agent):
    """Delivers finished results on their output channel, exactly once per package id."""

    role = "Answer"

    def __init__(self, node: Node, name: str, retry_delay: float | None = None):
        super().__init__(node, name)
        self.delivered: set[str] = set()
        self.undeliverable: list[str] = []
        self.retry_delay = self.heartbeat / 4 if retry_delay is None else retry_delay

    def handle(self, env: Envelope) -> None:
        if env.kind != RESULT or env.payload.get("type") != "collection-result":
            return
        tid = env.payload["task_id"]
        if tid in self.delivered:
            self.trace(env, "duplicate answer suppressed")
            return
        channel = env.output_channel
        for attempt in range(ANSWER_RETRIES + 1):
            try:
                self._emit(channel, env)
                break
            except OSError as exc:
                self.trace(env, f"delivery attempt {attempt + 1} failed: {exc}")
                if attempt < ANSWER_RETRIES:
                    time.sleep(self.retry_delay)
        else:
            self.trace(env, "undeliverable")
            self.undeliverable.append(tid)
            log.warning("result %s undeliverable on %s", tid, channel)
            return
        self.delivered.add(tid)

    def _emit(self, channel: dict, env: Envelope) -> None:
        kind = channel["type"]
        if kind == "file":
            text = "".join(json.dumps(ln) + "\n" for ln in answer_lines(env.payload))
            with _file_lock(channel["path"]), open(channel["path"], "a", encoding="utf-8") as fh:
                fh.write(text)
        elif kind == "stdout":
            for ln in answer_lines(env.payload):
                print(json.dumps(ln), flush=True)
        elif kind == "callback":
            out = env.copy()
            out.id = Envelope(RESULT, {}).id
            if not self.send(out, channel["address"]):
                raise OSError(f"callback address {channel['address']} unreachable")
        else:
            raise PackageError(f"unknown channel {kind!r}")


# -- client side ------------------------------------------------------------------


class Client(Agent):
    """Stands for a client node and creates its load balancer."""

    role = "Client"

    def __init__(self, node: Node, name: str, capacity: int = 1):
        super().__init__(node, name, meta={"capacity": capacity})
        self.capacity = capacity
        self.balancer: LoadBalancer | None = None

    def on_start(self) -> None:
        if self.capacity > 0:
            self.balancer = LoadBalancer(self.node, f"{self.node.name}/lb", self.capacity).start()

    def on_stop(self) -> None:
        if self.balancer is not None:
            self.balancer.stop()


class LoadBalancer(Agent):
    """Queues subtasks for its node, keeps a worker pool sized to the queue.

    Workers are created on demand up to ``capacity`` and terminated when
    idle with nothing queued. Once per heartbeat the balancer broadcasts its
    load and, if overloaded, hands queued subtasks to an idle peer by asking
    their Splitter to redirect them.
    """

    role = "LoadBalancer"

    def __init__(self, node: Node, name: str, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        super().__init__(node, name, meta={"capacity": capacity})
        self.capacity = capacity
        self.pending: list = []
        self._pseq = itertools.count()
        self.workers: dict[str, Worker] = {}
        self.busy: dict[str, str] = {}
        self.peers: dict[str, LoadReport] = {}
        self._wlock = threading.Lock()
        self.delegated = 0

    def intercept(self, env: Envelope) -> bool:
        if env.kind == RESULT and env.payload.get("type") == "load":
            report = LoadReport.from_dict(env.payload)
            # timestamps are local to each node; stamp on arrival instead
            report.timestamp = time.monotonic()
            self.peers[report.agent] = report
            return True
        return False

    def on_control(self, ctl: ControlPackage, env: Envelope) -> None:
        if ctl.command == CANCEL_TASK:
            self.notify(("cancel", ctl.cancel_id))

    def on_event(self, event: tuple) -> None:
        if event[0] == "cancel":
            kept = [item for item in self.pending if item[2].id != event[1]]
            heapq.heapify(kept)
            self.pending = kept

    def handle(self, env: Envelope) -> None:
        if env.kind == TASK:
            heapq.heappush(self.pending, (-env.priority, next(self._pseq), env))
            self._schedule()
        elif env.kind == RESULT and env.payload.get("type") == "subtask-result":
            self.busy.pop(env.sender, None)
            out = env.copy()
            self.send(out, env.payload["reply_to"])
            self._schedule()

    def _schedule(self) -> None:
        while self.pending and self.running:
            env = self.pending[0][2]
            kind = env.payload["task"].get("algorithm") or "rds"
            idle = [w for n, w in self.workers.items() if n not in self.busy and w.running]
            match = next((w for w in idle if w.kind == kind), None)
            if match is None:
                if len(self.workers) >= self.capacity:
                    if not idle:
                        break
                    self._retire(idle[0])
                match = self._spawn(kind)
            heapq.heappop(self.pending)
            self.busy[match.name] = env.id
            if not self.send(env, match.name):
                self.busy.pop(match.name, None)
                heapq.heappush(self.pending, (-env.priority, next(self._pseq), env))
                self._retire(match)
                break
        if not self.pending:
            for w in [w for n, w in self.workers.items() if n not in self.busy]:
                self._retire(w)

    def _spawn(self, kind: str) -> "Worker":
        w = Worker(self.node, self.node.unique_name(f"worker-{kind}"), kind, self.name)
        with self._wlock:
            self.workers[w.name] = w
        return w.start()

    def _retire(self, w: "Worker") -> None:
        with self._wlock:
            self.workers.pop(w.name, None)
        self.busy.pop(w.name, None)
        w.stop()

    def report(self) -> LoadReport:
        return LoadReport(self.node.name, self.name, min(len(self.busy), self.capacity),
                          len(self.pending), self.capacity)

    def tick(self) -> None:
        mine = self.report()
        self.send(Envelope(RESULT, mine.to_dict(), 9), role_address("LoadBalancer"))
        for mig in balance(mine, list(self.peers.values()), time.monotonic(), self.heartbeat):
            for _ in range(mig.count):
                if not self.pending:
                    break
                # hand over the least urgent subtask
                item = max(self.pending)
                self.pending.remove(item)
                heapq.heapify(self.pending)
                env = item[2]
                note = Envelope(RESULT, {"type": "redirect", "task_id": env.id, "to": mig.peer}, 9)
                self.send(note, env.payload["reply_to"])
                self.delegated += 1

    def on_stop(self) -> None:
        with self._wlock:
            workers = list(self.workers.values())
            self.workers.clear()
        for w in workers:
            w.stop()

    def status(self) -> dict:
        out = super().status()
        out.update(self.report().to_dict())
        out["workers"] = len(self.workers)
        return out


class Worker(Agent):
    """Runs one subtask at a time and reports the result to its load balancer."""

    role = "Worker"

    def __init__(self, node: Node, name: str, kind: str, balancer: str):
        super().__init__(node, name, kind=kind)
        self.balancer = balancer

    def handle(self, env: Envelope) -> None:
        if env.kind != TASK:
            return
        payload = {"type": "subtask-result", "task_id": env.id, "reply_to": env.payload["reply_to"],
                   "node": self.node.name}
        try:
            payload.update(execute(TaskPackage.from_dict(env.payload["task"])))
            payload["status"] = "ok"
        except Exception as exc:
            payload.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                           seed=env.payload["task"].get("seed"), algorithm=env.payload["task"].get("algorithm"))
        # results free ledger entries upstream, so they travel at top priority
        self.send(Envelope(RESULT, payload, 9, env.output_channel), self.balancer)


def execute(task: TaskPackage) -> dict:
    """Run a single-repetition task's processing steps and return its result record."""
    instance = task.resolve_instance()
    t0 = time.perf_counter()
    if "optimize" in task.processing_steps:
        run = run_optimizer(task.algorithm or "rds", instance, task.budget, task.seed, task.params)
        best, value, evals, algorithm = run.best, run.best_makespan, run.evals, run.algorithm
    else:
        ev = Evaluator(instance, min(task.budget, 1))
        order, bounds = random_flat(instance, RandomStream(task.seed))
        value = max(ev.evaluate(order, bounds))
        best, evals, algorithm = to_schedule(order, bounds), ev.calls, "initial-schedule"
    return {
        "algorithm": algorithm,
        "makespan": value,
        "seed": task.seed,
        "evals": evals,
        "wall_ms": (time.perf_counter() - t0) * 1000.0,
        "schedule": best.to_list() if best is not None else None,
    }


class ResultSink(Agent):
    """Callback endpoint for a submitting client; collects results by package id."""

    role = "Client"

    def __init__(self, node: Node, name: str):
        super().__init__(node, name, kind="sink")
        self.results: dict[str, dict] = {}
        self._cond = threading.Condition()

    def intercept(self, env: Envelope) -> bool:
        if env.kind == RESULT and env.payload.get("type") == "collection-result":
            with self._cond:
                self.results.setdefault(env.payload["task_id"], env.payload)
                self._cond.notify_all()
            return True
        return False

    def wait(self, task_id: str, timeout: float | None = None) -> dict:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while task_id not in self.results:
                left = None if deadline is None else deadline - time.monotonic()
                if left is not None and left <= 0:
                    raise TimeoutError(f"no result for {task_id} within {timeout} s")
                self._cond.wait(left)
            return self.results[task_id]
