"""Nodes host agents and route envelopes between them.

The server node owns the registry and routes every envelope whose receiver
is not local. Client nodes connect to it over :mod:`lagoon.transport` and
send anything not addressed to one of their own agents to the server. A
receiver is an agent name, ``@role:NAME`` (every agent with that role) or
``@all``.
"""

from __future__ import annotations

import logging
import threading
from typing import TYPE_CHECKING

from .. import transport
from ..transport import Hello, Session
from .packages import Envelope
from .registry import AgentId, DuplicateNameError, Registry

if TYPE_CHECKING:
    from .agent import Agent

log = logging.getLogger(__name__)

ALL_ADDRESS = "@all"


class Node:
    def __init__(self, name: str, heartbeat: float = transport.DEFAULT_HEARTBEAT):
        self.name = name
        self.heartbeat = heartbeat
        self.agents: dict[str, "Agent"] = {}
        self._lock = threading.RLock()
        self._names = 0

    def unique_name(self, stem: str) -> str:
        with self._lock:
            self._names += 1
            return f"{self.name}/{stem}-{self._names}"

    def attach(self, agent: "Agent") -> None:
        with self._lock:
            self.agents[agent.name] = agent
        try:
            self._register(agent.id)
        except DuplicateNameError:
            with self._lock:
                self.agents.pop(agent.name, None)
            raise

    def detach(self, agent: "Agent") -> None:
        with self._lock:
            self.agents.pop(agent.name, None)
        self._deregister(agent.name)

    def local(self, name: str) -> "Agent | None":
        with self._lock:
            return self.agents.get(name)

    def _deliver_local(self, name: str, env: Envelope) -> bool:
        agent = self.local(name)
        if agent is None or not agent.running:
            return False
        copy = env.copy()
        copy.receiver = name
        agent.post(copy)
        return True

    def lookup(self, role: str) -> list[AgentId]:
        """Registry lookups are answered on the server node only; elsewhere this is empty."""
        return []

    def _register(self, aid: AgentId) -> None:
        raise NotImplementedError

    def _deregister(self, name: str) -> None:
        raise NotImplementedError

    def send(self, env: Envelope) -> bool:
        raise NotImplementedError

    def stop_agents(self, deregister: bool = True) -> None:
        with self._lock:
            agents = list(self.agents.values())
        for agent in agents:
            agent.stop(deregister=deregister)
        for agent in agents:
            agent.join(timeout=2 * self.heartbeat + 1)


class ServerNode(Node):
    """Hosts the registry; routes locally or through client sessions."""

    def __init__(self, name: str = "server", heartbeat: float = transport.DEFAULT_HEARTBEAT):
        super().__init__(name, heartbeat)
        self.registry = Registry()
        self.sessions: dict[str, Session] = {}
        self.listener: transport.Listener | None = None
        self.registry.add_listener(self._on_registry)

    # -- registry ---------------------------------------------------------------------

    def _register(self, aid: AgentId) -> None:
        self.registry.register(aid)

    def _deregister(self, name: str) -> None:
        self.registry.deregister(name)

    def lookup(self, role: str) -> list[AgentId]:
        return self.registry.lookup(role)

    def _on_registry(self, event: str, agents: list[AgentId]) -> None:
        with self._lock:
            watchers = [a for a in self.agents.values() if getattr(a, "watch_registry", False)]
        for w in watchers:
            w.notify(("registry", event, list(agents)))

    # -- routing ----------------------------------------------------------------------

    def send(self, env: Envelope) -> bool:
        receiver = env.receiver
        if receiver == ALL_ADDRESS:
            names = [a.name for a in self.registry.all()]
        elif receiver.startswith("@role:"):
            names = [a.name for a in self.registry.lookup(receiver[6:])]
        else:
            return self._deliver(receiver, env)
        delivered = False
        for name in names:
            delivered = self._deliver(name, env) or delivered
        return delivered

    def _deliver(self, name: str, env: Envelope) -> bool:
        if self._deliver_local(name, env):
            return True
        aid = self.registry.get(name)
        if aid is None:
            return False
        with self._lock:
            session = self.sessions.get(aid.node)
        if session is None:
            return False
        data = env.to_dict()
        data["receiver"] = name
        return session.send({"t": "env", "env": data})

    # -- network ----------------------------------------------------------------------

    def listen(self, host: str = "127.0.0.1", port: int | None = None) -> int:
        """Accept client nodes; returns the bound port (``port=0`` picks a free one)."""
        port = transport.default_port() if port is None else port
        hello = Hello(self.name, ["Server"], 0)
        self.listener = transport.Listener(
            host, port, hello, self._accept_hello, self._on_session, self._make_session,
        ).start()
        return self.listener.port

    def _accept_hello(self, hello: Hello) -> str | None:
        if hello.node == self.name:
            return "duplicate-node-name"
        with self._lock:
            old = self.sessions.pop(hello.node, None)
        if old is not None:
            # reconnect under the same name: the old session is presumed dead
            log.info("evicting stale session for %s", hello.node)
            old.abort()
            self.registry.deregister_node(hello.node)
        return None

    def _make_session(self, sock, hello: Hello) -> Session:
        return Session(sock, hello, self._on_record, self._on_failure, self.heartbeat)

    def _on_session(self, session: Session) -> None:
        with self._lock:
            self.sessions[session.peer.node] = session

    def _on_record(self, session: Session, rec: dict) -> None:
        kind = rec.get("t")
        node = session.peer.node
        if kind == "env":
            self.send(Envelope.from_dict(rec["env"]))
        elif kind == "reg":
            aid = AgentId.from_dict(rec["agent"])
            if aid.node != node:
                log.warning("node %s tried to register agent of node %s", node, aid.node)
                return
            try:
                self.registry.register(aid)
            except DuplicateNameError as exc:
                log.warning("%s", exc)
        elif kind == "dereg":
            aid = self.registry.get(rec["name"])
            if aid is not None and aid.node == node:
                self.registry.deregister(aid.name)

    def _on_failure(self, session: Session, reason: str) -> None:
        node = session.peer.node
        with self._lock:
            current = self.sessions.get(node)
            if current is session:
                del self.sessions[node]
        if current is session:
            gone = self.registry.deregister_node(node)
            log.info("node %s left (%s); %d agents deregistered", node, reason, len(gone))

    def close(self) -> None:
        if self.listener is not None:
            self.listener.close()
        with self._lock:
            sessions = list(self.sessions.values())
            self.sessions.clear()
        for s in sessions:
            s.close("server shutting down")
        self.stop_agents()


class ClientNode(Node):
    """A node connected to the server; non-local traffic goes through the server."""

    def __init__(self, name: str, heartbeat: float = transport.DEFAULT_HEARTBEAT):
        super().__init__(name, heartbeat)
        self.session: Session | None = None
        self.crashed = False
        self.disconnected = threading.Event()

    def connect(self, host: str, port: int, roles: list[str] | None = None, capacity: int = 0,
                protocol_version: int = transport.PROTOCOL_VERSION) -> "ClientNode":
        hello = Hello(self.name, roles or ["Client"], capacity, protocol_version)
        self.session = transport.connect(host, port, hello, self._on_record, self._on_failure, self.heartbeat)
        return self

    def _register(self, aid: AgentId) -> None:
        if self.session is not None:
            self.session.send({"t": "reg", "agent": aid.to_dict()})

    def _deregister(self, name: str) -> None:
        if self.session is not None and not self.crashed:
            self.session.send({"t": "dereg", "name": name})

    def send(self, env: Envelope) -> bool:
        if self.crashed:
            return False
        if not env.receiver.startswith("@") and self._deliver_local(env.receiver, env):
            return True
        if self.session is None:
            return False
        return self.session.send({"t": "env", "env": env.to_dict()})

    def _on_record(self, session: Session, rec: dict) -> None:
        if rec.get("t") != "env" or self.crashed:
            return
        env = Envelope.from_dict(rec["env"])
        if not self._deliver_local(env.receiver, env):
            log.info("%s: no local agent %s", self.name, env.receiver)

    def _on_failure(self, session: Session, reason: str) -> None:
        log.info("%s lost the server: %s", self.name, reason)
        self.disconnected.set()

    def crash(self) -> None:
        """Simulate a node crash: drop the connection and silence every local agent."""
        self.crashed = True
        if self.session is not None:
            self.session.abort()
        with self._lock:
            agents = list(self.agents.values())
        for agent in agents:
            agent.stop(deregister=False)

    def close(self) -> None:
        self.stop_agents()
        if self.session is not None:
            self.session.close("client leaving")
