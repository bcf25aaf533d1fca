"""Length-prefixed JSON frames over TCP, with handshake and heartbeats.

A frame is a 4-byte big-endian length followed by that many bytes of UTF-8
JSON. Every record on the wire is a JSON object with a ``"t"`` field naming
its type: ``hello``, ``welcome``, ``reject``, ``hb``, ``env``, ``reg``,
``dereg`` or ``bye``.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, BinaryIO, Callable, Iterator

from .errors import LagoonError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
DEFAULT_PORT = 7421
DEFAULT_HEARTBEAT = 1.0
MISSED_BEATS = 3
_HEADER = struct.Struct("!I")


class TransportError(LagoonError):
    pass


class FrameTooLarge(TransportError):
    def __init__(self, length: int):
        self.length = length
        super().__init__(f"frame-too-large: {length} bytes > {MAX_FRAME}")


class TruncatedStream(TransportError):
    def __init__(self, declared: int, got: int):
        self.declared = declared
        self.got = got
        super().__init__(f"truncated-stream: declared {declared} bytes, stream ended after {got}")


class LengthMismatch(TransportError):
    """The stream ended inside a frame header."""


class HandshakeError(TransportError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class VersionMismatch(HandshakeError):
    def __init__(self, detail: str = ""):
        super().__init__("version-mismatch" + (f": {detail}" if detail else ""))
        self.reason = "version-mismatch"


def default_port() -> int:
    return int(os.environ.get("LAGOON_PORT", DEFAULT_PORT))


# -- framing --------------------------------------------------------------------


def encode_frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(len(body))
    return _HEADER.pack(len(body)) + body


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def decode_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame body from a binary stream; None on a clean end of stream.

    Reads exactly ``length + 4`` bytes.
    """
    header = _read_exact(stream, 4)
    if not header:
        return None
    if len(header) < 4:
        raise LengthMismatch(f"length-mismatch-on-eof: {len(header)} header bytes")
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameTooLarge(length)
    body = _read_exact(stream, length)
    if len(body) < length:
        raise TruncatedStream(length, len(body))
    return body


def decode_frames(buf: bytes) -> Iterator[bytes]:
    """Split a complete byte buffer into frame bodies."""
    pos = 0
    while pos < len(buf):
        if len(buf) - pos < 4:
            raise LengthMismatch(f"length-mismatch-on-eof: {len(buf) - pos} header bytes")
        (length,) = _HEADER.unpack_from(buf, pos)
        if length > MAX_FRAME:
            raise FrameTooLarge(length)
        end = pos + 4 + length
        if end > len(buf):
            raise TruncatedStream(length, len(buf) - pos - 4)
        yield buf[pos + 4:end]
        pos = end


def pack_record(record: dict) -> bytes:
    return encode_frame(json.dumps(record, separators=(",", ":")).encode("utf-8"))


def unpack_record(body: bytes) -> dict:
    return json.loads(body.decode("utf-8"))


# -- handshake ------------------------------------------------------------------


@dataclass
class Hello:
    node: str
    roles: list[str] = field(default_factory=list)
    capacity: int = 0
    protocol_version: int = PROTOCOL_VERSION

    def to_record(self) -> dict:
        return {"t": "hello", **asdict(self)}

    @classmethod
    def from_record(cls, rec: dict) -> "Hello":
        return cls(
            node=str(rec["node"]),
            roles=list(rec.get("roles", [])),
            capacity=int(rec.get("capacity", 0)),
            protocol_version=int(rec.get("protocol_version", -1)),
        )


class _SocketReader:
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def read(self, n: int) -> bytes:
        return self.sock.recv(n)


# -- sessions -------------------------------------------------------------------


class Session:
    """One live connection: a reader and a writer thread, serialized writes.

    The writer also emits a heartbeat whenever it has been idle for one
    interval and declares the peer dead after ``MISSED_BEATS`` intervals
    without any incoming frame. End of stream counts as failure too.
    ``on_failure`` fires at most once; a polite :meth:`close` does not
    trigger it.
    """

    def __init__(
        self,
        sock: socket.socket,
        peer: Hello,
        on_record: Callable[["Session", dict], None],
        on_failure: Callable[["Session", str], None] | None = None,
        heartbeat: float = DEFAULT_HEARTBEAT,
    ):
        self.sock = sock
        self.peer = peer
        self.on_record = on_record
        self.on_failure = on_failure
        self.heartbeat = heartbeat
        self.last_seen = time.monotonic()
        self._out: queue.Queue[bytes | None] = queue.Queue()
        self._done = threading.Event()
        self._lock = threading.Lock()
        self._closed = False
        self._orderly = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True, name=f"rd-{peer.node}")
        self._writer = threading.Thread(target=self._write_loop, daemon=True, name=f"wr-{peer.node}")

    @property
    def alive(self) -> bool:
        return not self._closed

    def start(self) -> "Session":
        self._reader.start()
        self._writer.start()
        return self

    def send(self, record: dict) -> bool:
        if self._closed:
            return False
        self._out.put(pack_record(record))
        return True

    def close(self, reason: str = "bye") -> None:
        """Orderly close: flush queued frames, tell the peer, no failure event."""
        if self._mark_closed():
            self._orderly = True
            self._out.put(pack_record({"t": "bye", "reason": reason}))
            self._out.put(None)

    def abort(self) -> None:
        """Drop the connection without a goodbye, as a crash would."""
        if self._mark_closed():
            self._shutdown_socket()
            self._out.put(None)

    def _mark_closed(self) -> bool:
        with self._lock:
            if self._closed:
                return False
            self._closed = True
            return True

    def _fail(self, reason: str) -> None:
        if self._mark_closed():
            log.info("session %s failed: %s", self.peer.node, reason)
            self._shutdown_socket()
            self._out.put(None)
            if self.on_failure is not None:
                self.on_failure(self, reason)

    def _shutdown_socket(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _read_loop(self) -> None:
        reader = _SocketReader(self.sock)
        while True:
            try:
                body = decode_frame(reader)
            except (OSError, TransportError) as exc:
                self._fail(f"read error: {exc}")
                return
            if body is None:
                self._fail("end of stream")
                return
            self.last_seen = time.monotonic()
            rec = unpack_record(body)
            kind = rec.get("t")
            if kind == "hb":
                continue
            if kind == "bye":
                # orderly goodbye from the peer still counts as the node leaving
                self._fail(f"peer closed: {rec.get('reason', '')}")
                return
            try:
                self.on_record(self, rec)
            except Exception:  # a bad record must not kill the session
                log.exception("record handler failed on %s", kind)

    def _write_loop(self) -> None:
        hb = pack_record({"t": "hb"})
        while True:
            try:
                frame = self._out.get(timeout=self.heartbeat)
            except queue.Empty:
                frame = hb
            if frame is None:
                break
            try:
                self.sock.sendall(frame)
            except OSError as exc:
                self._fail(f"write error: {exc}")
                break
            if time.monotonic() - self.last_seen > MISSED_BEATS * self.heartbeat:
                self._fail("heartbeat timeout")
                break
        if self._orderly:
            self._shutdown_socket()


def connect(
    host: str,
    port: int,
    hello: Hello,
    on_record: Callable[[Session, dict], None],
    on_failure: Callable[[Session, str], None] | None = None,
    heartbeat: float = DEFAULT_HEARTBEAT,
    timeout: float = 5.0,
) -> Session:
    """Dial the server, exchange Hello records and return the started session."""
    sock = socket.create_connection((host, port), timeout=timeout)
    try:
        sock.sendall(pack_record(hello.to_record()))
        reply = decode_frame(_SocketReader(sock))
        if reply is None:
            raise HandshakeError("server closed the connection during handshake")
        rec = unpack_record(reply)
        if rec.get("t") == "reject":
            reason = str(rec.get("reason", "rejected"))
            if reason.startswith("version-mismatch"):
                raise VersionMismatch(reason)
            raise HandshakeError(reason)
        if rec.get("t") != "welcome":
            raise HandshakeError(f"unexpected handshake record {rec.get('t')!r}")
    except BaseException:
        sock.close()
        raise
    sock.settimeout(None)
    server = Hello(str(rec.get("node", "server")), list(rec.get("roles", [])),
                   int(rec.get("capacity", 0)), int(rec.get("protocol_version", PROTOCOL_VERSION)))
    return Session(sock, server, on_record, on_failure, heartbeat).start()


class Listener:
    """Accept loop for the server node.

    ``accept_hello`` validates a client's Hello and returns None to accept or
    a reason string to reject; ``on_session`` receives each accepted session
    before its threads start, so it can install handlers.
    """

    def __init__(
        self,
        host: str,
        port: int,
        local: Hello,
        accept_hello: Callable[[Hello], str | None],
        on_session: Callable[[Session], None],
        make_session: Callable[[socket.socket, Hello], Session],
    ):
        self.local = local
        self.accept_hello = accept_hello
        self.on_session = on_session
        self.make_session = make_session
        self.sock = socket.create_server((host, port), reuse_port=False)
        self.port = self.sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True, name="listener")

    def start(self) -> "Listener":
        self._thread.start()
        return self

    def close(self) -> None:
        self._stop.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handshake, args=(conn,), daemon=True).start()

    def _handshake(self, conn: socket.socket) -> None:
        conn.settimeout(5.0)
        try:
            body = decode_frame(_SocketReader(conn))
            if body is None:
                conn.close()
                return
            rec = unpack_record(body)
            hello = Hello.from_record(rec) if rec.get("t") == "hello" else None
            if hello is None:
                reason = "expected hello"
            elif hello.protocol_version != PROTOCOL_VERSION:
                reason = f"version-mismatch: server {PROTOCOL_VERSION}, client {hello.protocol_version}"
            else:
                reason = self.accept_hello(hello)
            if reason is not None:
                conn.sendall(pack_record({"t": "reject", "reason": reason}))
                conn.close()
                return
            conn.sendall(pack_record({"t": "welcome", **_hello_fields(self.local)}))
        except (OSError, TransportError, ValueError, KeyError) as exc:
            log.info("handshake failed: %s", exc)
            conn.close()
            return
        conn.settimeout(None)
        session = self.make_session(conn, hello)
        self.on_session(session)
        session.start()


def _hello_fields(h: Hello) -> dict[str, Any]:
    return {"node": h.node, "roles": h.roles, "capacity": h.capacity, "protocol_version": h.protocol_version}
