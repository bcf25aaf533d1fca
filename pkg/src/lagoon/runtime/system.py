"""Assembling nodes and agents into a running system."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .. import transport
from ..errors import LagoonError
from .agent import Agent
from .node import ALL_ADDRESS, ClientNode, Node, ServerNode
from .packages import (
    SHUTDOWN,
    CollectionPackage,
    ControlPackage,
    Envelope,
    TaskPackage,
    callback_channel,
    collection_envelope,
    control_envelope,
    role_address,
    task_envelope,
)
from .roles import Answer, Client, Collector, Controller, ResultSink, Server, Splitter


class RuntimeUnreachableError(LagoonError):
    pass


def control_address(ctl: ControlPackage) -> str:
    t = ctl.target["type"]
    if t == "agent":
        return ctl.target["name"]
    if t == "role":
        return role_address(ctl.target["role"])
    if t == "package":
        # packages are owned by the Collector, which cancels their members
        return role_address("Collector")
    return ALL_ADDRESS


@dataclass
class ServerAgents:
    server: Server
    collector: Collector
    controller: Controller
    splitter: Splitter
    answer: Answer


def start_server_agents(node: ServerNode) -> ServerAgents:
    p = node.name
    return ServerAgents(
        Server(node, f"{p}/server").start(),
        Collector(node, f"{p}/collector").start(),
        Controller(node, f"{p}/controller").start(),
        Splitter(node, f"{p}/splitter").start(),
        Answer(node, f"{p}/answer").start(),
    )


def _envelope_for(package, priority: int, channel: dict) -> Envelope:
    if isinstance(package, TaskPackage):
        return task_envelope(package, priority=priority, output_channel=channel)
    if isinstance(package, CollectionPackage):
        return collection_envelope(package, priority=priority, output_channel=channel)
    raise TypeError(f"cannot submit {type(package).__name__}")


class _Submitter:
    node: Node
    sink: ResultSink

    def _collector_address(self) -> str:
        return role_address("Collector")

    def submit(self, package: TaskPackage | CollectionPackage, priority: int = 5,
               output_channel: dict | None = None) -> str:
        """Send a task or collection to the Collector; returns the package id.

        Without an explicit channel the result comes back to this submitter's
        sink, where :meth:`wait` picks it up.
        """
        env = _envelope_for(package, priority, output_channel or callback_channel(self.sink.name))
        if not self.sink.send(env, self._collector_address()):
            raise RuntimeUnreachableError("no Collector reachable")
        return env.id

    def wait(self, package_id: str, timeout: float | None = None) -> dict:
        return self.sink.wait(package_id, timeout)

    def run(self, package, priority: int = 5, timeout: float | None = None) -> dict:
        return self.wait(self.submit(package, priority), timeout)

    def control(self, ctl: ControlPackage) -> bool:
        return self.sink.send(control_envelope(ctl), control_address(ctl))


class LocalRuntime(_Submitter):
    """Everything on one node with in-process channels.

    ``workers`` is the capacity of the local load balancer (0 for a pure
    server that relies on client nodes). :meth:`listen` opens the node to
    networked clients.
    """

    def __init__(self, workers: int = 1, heartbeat: float = transport.DEFAULT_HEARTBEAT, name: str = "server"):
        self.node = ServerNode(name, heartbeat)
        self.agents = start_server_agents(self.node)
        self.client: Client | None = None
        if workers > 0:
            self.client = Client(self.node, f"{name}/client", workers).start()
        self.sink = ResultSink(self.node, f"{name}/sink").start()

    @property
    def registry(self):
        return self.node.registry

    def listen(self, host: str = "127.0.0.1", port: int | None = None) -> int:
        return self.node.listen(host, port)

    def shutdown(self, timeout: float = 5.0) -> bool:
        """Shutdown control to every agent; True once the registry is empty."""
        self.control(ControlPackage(SHUTDOWN, {"type": "all"}))
        deadline = time.monotonic() + timeout
        while len(self.node.registry) and time.monotonic() < deadline:
            time.sleep(0.01)
        empty = len(self.node.registry) == 0
        self.node.close()
        return empty

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


class ClientProcess(_Submitter):
    """A client node: connects to the server, optionally offers workers, can submit."""

    def __init__(self, host: str, port: int, name: str, workers: int = 0,
                 heartbeat: float = transport.DEFAULT_HEARTBEAT, protocol_version: int = transport.PROTOCOL_VERSION):
        self.node = ClientNode(name, heartbeat)
        roles = ["Client"] + (["LoadBalancer", "Worker"] if workers else [])
        try:
            self.node.connect(host, port, roles, workers, protocol_version)
        except OSError as exc:
            raise RuntimeUnreachableError(f"cannot reach server at {host}:{port}: {exc}") from exc
        self.client = Client(self.node, f"{name}/client", workers).start()
        self.sink = ResultSink(self.node, f"{name}/sink").start()

    def crash(self) -> None:
        self.node.crash()

    def close(self) -> None:
        self.node.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def wait_for(predicate, timeout: float = 10.0, interval: float = 0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


__all__ = [
    "Agent",
    "ClientProcess",
    "LocalRuntime",
    "RuntimeUnreachableError",
    "ServerAgents",
    "control_address",
    "start_server_agents",
    "wait_for",
]
