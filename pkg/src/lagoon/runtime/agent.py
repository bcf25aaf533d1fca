"""Agent base class: a messaging thread and a working thread per agent.

The messaging thread drains the inbox. Control envelopes are handled right
there, so an agent busy with a long working step still reacts to them.
Everything else goes into a priority queue ordered by (priority desc,
arrival). The working thread pops from that queue and calls :meth:`handle`,
and calls :meth:`tick` once per heartbeat.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import threading
import time
from typing import TYPE_CHECKING

from .packages import (
    CANCEL_TASK,
    CONTROL,
    DEBUG_OFF,
    DEBUG_ON,
    REPORT_STATUS,
    RESULT,
    SHUTDOWN,
    ControlPackage,
    Envelope,
)
from .registry import AgentId

if TYPE_CHECKING:
    from .node import Node

log = logging.getLogger(__name__)

_STOP = object()
EVENT_PRIORITY = 9


class Agent:
    role = "Agent"

    def __init__(self, node: "Node", name: str, kind: str | None = None, meta: dict | None = None):
        self.node = node
        self.name = name
        self.kind = kind
        self.id = AgentId(node.name, name, self.role, kind, tuple(sorted((meta or {}).items())))
        self.heartbeat = node.heartbeat
        self.debug = False
        self.running = False
        self.handled: list[str] = []  # envelope ids in the order handle() saw them
        self._inbox: queue.Queue = queue.Queue()
        self._heap: list = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._cancelled: set[str] = set()
        self._threads: list[threading.Thread] = []
        self._stopped = threading.Event()

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> "Agent":
        """Initial behavior: register with the listing service, then start both threads."""
        self.running = True
        self.node.attach(self)
        self.on_start()
        for target, label in ((self._messaging_loop, "msg"), (self._working_loop, "work")):
            t = threading.Thread(target=target, daemon=True, name=f"{self.name}-{label}")
            self._threads.append(t)
            t.start()
        return self

    def stop(self, deregister: bool = True) -> None:
        if not self.running:
            return
        self.running = False
        self.on_stop()
        if deregister:
            self.node.detach(self)
        self._inbox.put(_STOP)
        with self._cv:
            self._cv.notify_all()
        self._stopped.set()

    def join(self, timeout: float | None = None) -> None:
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout)

    def wait_stopped(self, timeout: float | None = None) -> bool:
        return self._stopped.wait(timeout)

    def on_start(self) -> None:
        pass

    def on_stop(self) -> None:
        pass

    # -- messaging behavior -------------------------------------------------------

    def post(self, env: Envelope) -> None:
        """Called by the node to deliver an envelope."""
        self._inbox.put(env)

    def notify(self, event: tuple) -> None:
        """Node-local event (e.g. registry changes) for the working thread.

        Events pass through the inbox, so they keep their arrival order
        relative to envelopes, and then rank with the most urgent work.
        """
        self._inbox.put(event)

    def _messaging_loop(self) -> None:
        while True:
            item = self._inbox.get()
            if item is _STOP:
                return
            if isinstance(item, tuple):
                with self._cv:
                    heapq.heappush(self._heap, (-EVENT_PRIORITY, next(self._seq), item))
                    self._cv.notify()
                continue
            env: Envelope = item
            try:
                if env.kind == CONTROL:
                    self._handle_control(env)
                elif not self.intercept(env):
                    with self._cv:
                        heapq.heappush(self._heap, (-env.priority, next(self._seq), env))
                        self._cv.notify()
            except Exception:
                log.exception("%s: messaging failed on %s", self.name, env.kind)
            if not self.running:
                return

    def intercept(self, env: Envelope) -> bool:
        """Handle a non-control envelope on the messaging thread; return True if consumed."""
        return False

    def _handle_control(self, env: Envelope) -> None:
        ctl = ControlPackage.from_dict(env.payload["control"])
        env.note(self.name, f"control {ctl.command}")
        if ctl.command == SHUTDOWN:
            self.stop()
        elif ctl.command == DEBUG_ON:
            self.debug = True
        elif ctl.command == DEBUG_OFF:
            self.debug = False
        elif ctl.command == REPORT_STATUS:
            reply = Envelope(RESULT, {"type": "status", "status": self.status()}, 9)
            reply.receiver = env.sender
            self.send(reply)
        elif ctl.command == CANCEL_TASK:
            self.cancel(ctl.cancel_id)
        self.on_control(ctl, env)

    def on_control(self, ctl: ControlPackage, env: Envelope) -> None:
        pass

    def cancel(self, task_id: str | None) -> None:
        """Drop a queued envelope with this id, if it has not started yet."""
        if task_id is None:
            return
        with self._cv:
            self._cancelled.add(task_id)
            kept = [item for item in self._heap if not (isinstance(item[2], Envelope) and item[2].id == task_id)]
            if len(kept) != len(self._heap):
                heapq.heapify(kept)
                self._heap = kept

    def status(self) -> dict:
        with self._cv:
            queued = sum(1 for item in self._heap if isinstance(item[2], Envelope))
        return {"name": self.name, "role": self.role, "kind": self.kind, "node": self.node.name,
                "queued": queued, "debug": self.debug}

    @property
    def queued(self) -> int:
        with self._cv:
            return len(self._heap)

    # -- working behavior ---------------------------------------------------------

    def _working_loop(self) -> None:
        next_tick = time.monotonic() + self.heartbeat
        while self.running:
            item = None
            with self._cv:
                if not self._heap:
                    self._cv.wait(max(0.0, next_tick - time.monotonic()))
                if self._heap and self.running:
                    item = heapq.heappop(self._heap)[2]
            if item is not None:
                try:
                    if isinstance(item, Envelope):
                        self.handled.append(item.id)
                        self.handle(item)
                    else:
                        self.on_event(item)
                except Exception:
                    log.exception("%s: working step failed", self.name)
            now = time.monotonic()
            if now >= next_tick and self.running:
                next_tick = now + self.heartbeat
                try:
                    self.tick()
                except Exception:
                    log.exception("%s: tick failed", self.name)

    def handle(self, env: Envelope) -> None:
        """One working step for a queued Task, Collection or Result envelope."""

    def on_event(self, event: tuple) -> None:
        pass

    def tick(self) -> None:
        pass

    # -- helpers -------------------------------------------------------------------

    def send(self, env: Envelope, receiver: str | None = None) -> bool:
        if receiver is not None:
            env.receiver = receiver
        env.sender = self.name
        return self.node.send(env)

    def trace(self, env: Envelope, text: str) -> None:
        env.note(self.name, text)
        if self.debug:
            log.info("%s %s: %s", self.name, env.id[:8], text)
