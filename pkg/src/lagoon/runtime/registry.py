"""The listing service: agents register by name and role, others look them up."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

from ..errors import LagoonError


class DuplicateNameError(LagoonError):
    pass


@dataclass(frozen=True)
class AgentId:
    node: str
    name: str
    role: str
    kind: str | None = None
    # free-form extras, e.g. a load balancer's capacity
    meta: tuple[tuple[str, object], ...] = field(default=())

    @property
    def info(self) -> dict:
        return dict(self.meta)

    def to_dict(self) -> dict:
        return {"node": self.node, "name": self.name, "role": self.role, "kind": self.kind,
                "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, data: dict) -> "AgentId":
        return cls(data["node"], data["name"], data["role"], data.get("kind"),
                   tuple(sorted((data.get("meta") or {}).items())))


Listener = Callable[[str, list[AgentId]], None]


class Registry:
    """Serialized registry. Mutations happen under one lock, so they are totally ordered.

    Listeners are called after each change, outside the lock, with
    ``("joined" | "left", [AgentId, ...])``.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._agents: dict[str, AgentId] = {}
        self._listeners: list[Listener] = []

    def add_listener(self, fn: Listener) -> None:
        with self._lock:
            self._listeners.append(fn)

    def remove_listener(self, fn: Listener) -> None:
        with self._lock:
            if fn in self._listeners:
                self._listeners.remove(fn)

    def register(self, agent: AgentId) -> None:
        with self._lock:
            if agent.name in self._agents:
                raise DuplicateNameError(f"agent name {agent.name!r} already registered")
            self._agents[agent.name] = agent
            listeners = list(self._listeners)
        for fn in listeners:
            fn("joined", [agent])

    def deregister(self, name: str) -> AgentId | None:
        with self._lock:
            agent = self._agents.pop(name, None)
            listeners = list(self._listeners)
        if agent is not None:
            for fn in listeners:
                fn("left", [agent])
        return agent

    def deregister_node(self, node: str) -> list[AgentId]:
        with self._lock:
            gone = [a for a in self._agents.values() if a.node == node]
            for a in gone:
                del self._agents[a.name]
            listeners = list(self._listeners)
        if gone:
            for fn in listeners:
                fn("left", gone)
        return gone

    def get(self, name: str) -> AgentId | None:
        with self._lock:
            return self._agents.get(name)

    def lookup(self, role: str) -> list[AgentId]:
        """Snapshot of the agents currently registered with ``role``, in name order."""
        with self._lock:
            return sorted((a for a in self._agents.values() if a.role == role), key=lambda a: a.name)

    def all(self) -> list[AgentId]:
        with self._lock:
            return sorted(self._agents.values(), key=lambda a: a.name)

    def __len__(self) -> int:
        with self._lock:
            return len(self._agents)
