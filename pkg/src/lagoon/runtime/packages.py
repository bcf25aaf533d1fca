"""Envelopes and the payloads they carry.

Every message between agents is an :class:`Envelope`. It has an id, a
priority, a kind, an output channel and an append-only trace. All of it
round-trips through JSON, so in-process delivery and the wire behave the
same.
"""

from __future__ import annotations

import copy
import json
import time
import uuid
from dataclasses import asdict, dataclass, field
from typing import Any

from ..errors import LagoonError
from ..model import Instance

TASK, COLLECTION, CONTROL, RESULT = "Task", "Collection", "Control", "Result"
KINDS = (TASK, COLLECTION, CONTROL, RESULT)

BEST_OF, ALL = "BestOf", "All"

SHUTDOWN, DEBUG_ON, DEBUG_OFF, REPORT_STATUS, CANCEL_TASK = (
    "Shutdown", "DebugOn", "DebugOff", "ReportStatus", "CancelTask",
)
COMMANDS = (SHUTDOWN, DEBUG_ON, DEBUG_OFF, REPORT_STATUS, CANCEL_TASK)

DEFAULT_PRIORITY = 5
DEFAULT_STEPS = ("initial-schedule", "optimize")
KNOWN_STEPS = frozenset(DEFAULT_STEPS)

ROLES = (
    "Server", "TaskContractor", "Controller", "Collector", "Splitter",
    "Answer", "Client", "LoadBalancer", "Worker",
)


class PackageError(LagoonError, ValueError):
    pass


def role_address(role: str) -> str:
    """Receiver string that fans out to every agent with ``role``."""
    return f"@role:{role}"


# -- output channels ----------------------------------------------------------


def file_channel(path: str) -> dict:
    return {"type": "file", "path": str(path)}


def stdout_channel() -> dict:
    return {"type": "stdout"}


def callback_channel(address: str) -> dict:
    return {"type": "callback", "address": address}


def check_channel(channel: dict) -> dict:
    kind = channel.get("type")
    if kind == "file" and channel.get("path"):
        return channel
    if kind == "stdout":
        return channel
    if kind == "callback" and channel.get("address"):
        return channel
    raise PackageError(f"malformed output channel: {channel!r}")


# -- envelope -----------------------------------------------------------------


@dataclass
class Envelope:
    kind: str
    payload: dict
    priority: int = DEFAULT_PRIORITY
    output_channel: dict = field(default_factory=stdout_channel)
    id: str = field(default_factory=lambda: uuid.uuid4().hex)
    sender: str = ""
    receiver: str = ""
    trace: list[list] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PackageError(f"unknown envelope kind {self.kind!r}")
        if not 0 <= int(self.priority) <= 9:
            raise PackageError(f"priority must be 0..9, got {self.priority}")
        self.priority = int(self.priority)

    def note(self, agent: str, text: str) -> None:
        self.trace.append([time.time(), agent, text])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Envelope":
        return cls(
            kind=data["kind"],
            payload=data.get("payload", {}),
            priority=data.get("priority", DEFAULT_PRIORITY),
            output_channel=data.get("output_channel") or stdout_channel(),
            id=data["id"],
            sender=data.get("sender", ""),
            receiver=data.get("receiver", ""),
            trace=[list(t) for t in data.get("trace", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Envelope":
        return cls.from_dict(json.loads(text))

    def copy(self) -> "Envelope":
        return Envelope.from_dict(copy.deepcopy(self.to_dict()))


# -- payloads -------------------------------------------------------------------


@dataclass
class TaskPackage:
    """One optimization job: which instance, which method, how much budget."""

    instance: dict | None = None
    instance_ref: str | None = None
    algorithm: str | None = None
    params: dict = field(default_factory=dict)
    budget: int = 10000
    seed: int = 0
    repetitions: int = 1
    processing_steps: list[str] = field(default_factory=lambda: list(DEFAULT_STEPS))
    label: str = ""

    def __post_init__(self):
        if (self.instance is None) == (self.instance_ref is None):
            raise PackageError("task needs exactly one of instance or instance_ref")
        if int(self.budget) < 1:
            raise PackageError(f"budget must be >= 1, got {self.budget}")
        if int(self.repetitions) < 1:
            raise PackageError(f"repetitions must be >= 1, got {self.repetitions}")
        if not 0 <= int(self.seed) < 2**64:
            raise PackageError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        unknown = [s for s in self.processing_steps if s not in KNOWN_STEPS]
        if unknown or not self.processing_steps:
            raise PackageError(f"processing_steps must be drawn from {sorted(KNOWN_STEPS)}, got {self.processing_steps}")
        self.budget = int(self.budget)
        self.repetitions = int(self.repetitions)
        self.seed = int(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TaskPackage":
        fields = cls.__dataclass_fields__
        unknown = set(data) - set(fields)
        if unknown:
            raise PackageError(f"unknown task fields: {sorted(unknown)}")
        return cls(**data)

    def resolve_instance(self) -> Instance:
        if self.instance is not None:
            return _instance_from_dict(self.instance)
        return resolve_ref(self.instance_ref)


_INSTANCE_CACHE: dict[str, Instance] = {}


def _instance_from_dict(data: dict) -> Instance:
    # subtasks of one job share the inline instance; parse it once per process
    key = json.dumps(data, sort_keys=True)
    inst = _INSTANCE_CACHE.get(key)
    if inst is None:
        if len(_INSTANCE_CACHE) > 256:
            _INSTANCE_CACHE.clear()
        inst = _INSTANCE_CACHE[key] = Instance.from_dict(data)
    return inst


def resolve_ref(ref: str) -> Instance:
    """``canonical:NAME`` names a built-in setup; anything else is a JSON file path."""
    if ref.startswith("canonical:"):
        from ..bench.setups import canonical_instance

        return canonical_instance(ref.split(":", 1)[1])
    return Instance.load(ref)


@dataclass
class CollectionPackage:
    tasks: list[TaskPackage]
    evaluation: str = BEST_OF

    def __post_init__(self):
        if not self.tasks:
            raise PackageError("a collection needs at least one task")
        if self.evaluation not in (BEST_OF, ALL):
            raise PackageError(f"evaluation must be {BEST_OF} or {ALL}, got {self.evaluation!r}")

    def to_dict(self) -> dict:
        return {"tasks": [t.to_dict() for t in self.tasks], "evaluation": self.evaluation}

    @classmethod
    def from_dict(cls, data: dict) -> "CollectionPackage":
        return cls([TaskPackage.from_dict(t) for t in data["tasks"]], data.get("evaluation", BEST_OF))


@dataclass
class ControlPackage:
    """``target`` is ``{"type": "agent", "name": ...}``, ``{"type": "role", "role": ...}``,
    ``{"type": "all"}`` or ``{"type": "package", "id": ...}``."""

    command: str
    target: dict = field(default_factory=lambda: {"type": "all"})
    task_id: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise PackageError(f"unknown control command {self.command!r}")
        t = self.target.get("type")
        ok = (
            (t == "agent" and self.target.get("name"))
            or (t == "role" and self.target.get("role"))
            or t == "all"
            or (t == "package" and self.target.get("id"))
        )
        if not ok:
            raise PackageError(f"malformed control target {self.target!r}")
        if self.command == CANCEL_TASK and not (self.task_id or t == "package"):
            raise PackageError("CancelTask needs a task id")

    @property
    def cancel_id(self) -> str | None:
        return self.task_id or self.target.get("id")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ControlPackage":
        return cls(data["command"], data.get("target") or {"type": "all"}, data.get("task_id"))


@dataclass
class LoadReport:
    node: str
    agent: str
    active_workers: int
    queued_tasks: int
    capacity: int
    timestamp: float = field(default_factory=time.monotonic)

    def __post_init__(self):
        if not 0 <= self.active_workers <= self.capacity:
            raise PackageError("active_workers must lie in [0, capacity]")

    def to_dict(self) -> dict:
        return {"type": "load", **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "LoadReport":
        return cls(data["node"], data["agent"], int(data["active_workers"]),
                   int(data["queued_tasks"]), int(data["capacity"]), float(data["timestamp"]))


def task_envelope(task: TaskPackage, *, priority: int = DEFAULT_PRIORITY,
                  output_channel: dict | None = None, **extra: Any) -> Envelope:
    return Envelope(TASK, {"task": task.to_dict(), **extra}, priority,
                    check_channel(output_channel or stdout_channel()))


def collection_envelope(coll: CollectionPackage, *, priority: int = DEFAULT_PRIORITY,
                        output_channel: dict | None = None) -> Envelope:
    return Envelope(COLLECTION, {"collection": coll.to_dict()}, priority,
                    check_channel(output_channel or stdout_channel()))


def control_envelope(ctl: ControlPackage, priority: int = 9) -> Envelope:
    return Envelope(CONTROL, {"control": ctl.to_dict()}, priority)
