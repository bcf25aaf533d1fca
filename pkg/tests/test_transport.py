import io
import socket
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagoon.runtime import Envelope
from lagoon.transport import (
    MAX_FRAME,
    FrameTooLarge,
    HandshakeError,
    Hello,
    LengthMismatch,
    Listener,
    Session,
    TruncatedStream,
    VersionMismatch,
    connect,
    decode_frame,
    decode_frames,
    default_port,
    encode_frame,
    pack_record,
    unpack_record,
)


def test_empty_frame():
    assert encode_frame(b"") == bytes([0, 0, 0, 0])
    assert decode_frame(io.BytesIO(bytes([0, 0, 0, 0]))) == b""


def test_two_byte_frame():
    assert encode_frame(b"{}") == bytes([0, 0, 0, 2, 0x7B, 0x7D])
    stream = io.BytesIO(bytes([0, 0, 0, 2, 0x7B, 0x7D]))
    assert unpack_record(decode_frame(stream)) == {}
    assert decode_frame(stream) is None


def test_truncated_body():
    with pytest.raises(TruncatedStream):
        decode_frame(io.BytesIO(bytes([0, 0, 0, 5, 1, 2])))
    with pytest.raises(TruncatedStream):
        list(decode_frames(bytes([0, 0, 0, 5, 1, 2])))


def test_partial_header():
    with pytest.raises(LengthMismatch):
        decode_frame(io.BytesIO(bytes([0, 0])))


def test_frame_size_limit():
    with pytest.raises(FrameTooLarge):
        decode_frame(io.BytesIO((MAX_FRAME + 1).to_bytes(4, "big")))


def test_frames_roundtrip():
    records = [{"t": "env", "n": i, "s": "ä" * i} for i in range(5)]
    buf = b"".join(pack_record(r) for r in records)
    assert [unpack_record(b) for b in decode_frames(buf)] == records


def test_port_override(monkeypatch):
    monkeypatch.delenv("LAGOON_PORT", raising=False)
    assert default_port() == 7421
    monkeypatch.setenv("LAGOON_PORT", "9000")
    assert default_port() == 9000


class _Server:
    def __init__(self, heartbeat=0.1, accept=lambda h: None):
        self.records = []
        self.failures = []
        self.sessions = []
        self.failed = threading.Event()

        def make(sock, hello):
            return Session(sock, hello, lambda s, r: self.records.append(r), self._failure, heartbeat)

        self.listener = Listener("127.0.0.1", 0, Hello("srv"), accept, self.sessions.append, make).start()

    def _failure(self, session, reason):
        self.failures.append((session.peer.node, reason, time.monotonic()))
        self.failed.set()


def test_handshake_and_exchange():
    srv = _Server()
    got = []
    s = connect("127.0.0.1", srv.listener.port, Hello("c1", ["Worker"], 2), lambda _, r: got.append(r), heartbeat=0.1)
    assert s.peer.node == "srv"
    s.send({"t": "env", "x": 1})
    deadline = time.monotonic() + 2
    while not srv.records and time.monotonic() < deadline:
        time.sleep(0.01)
    assert srv.records == [{"t": "env", "x": 1}]
    assert srv.sessions[0].peer == Hello("c1", ["Worker"], 2)
    s.close()
    srv.listener.close()


def test_version_mismatch_rejected():
    srv = _Server()
    with pytest.raises(VersionMismatch):
        connect("127.0.0.1", srv.listener.port, Hello("c1", protocol_version=99), lambda *_: None)
    srv.listener.close()


def test_custom_rejection():
    srv = _Server(accept=lambda h: "duplicate-node-name" if h.node == "srv" else None)
    with pytest.raises(HandshakeError, match="duplicate-node-name"):
        connect("127.0.0.1", srv.listener.port, Hello("srv"), lambda *_: None)
    srv.listener.close()


def test_silent_peer_fails_after_missed_beats():
    beat = 0.1
    srv = _Server(heartbeat=beat)
    raw = socket.create_connection(("127.0.0.1", srv.listener.port))
    raw.sendall(pack_record(Hello("mute").to_record()))
    assert unpack_record(decode_frame(raw.makefile("rb")))["t"] == "welcome"
    start = time.monotonic()
    assert srv.failed.wait(3)
    elapsed = (srv.failures[0][2] - start) / beat
    assert 3 <= elapsed <= 5, elapsed
    assert "heartbeat" in srv.failures[0][1]
    raw.close()
    srv.listener.close()


def test_heartbeats_keep_idle_session_alive():
    srv = _Server(heartbeat=0.05)
    s = connect("127.0.0.1", srv.listener.port, Hello("c1"), lambda *_: None, heartbeat=0.05)
    time.sleep(0.5)
    assert not srv.failures and s.alive
    s.close()
    srv.listener.close()


def test_abort_reported_as_failure():
    srv = _Server()
    s = connect("127.0.0.1", srv.listener.port, Hello("c1"), lambda *_: None, heartbeat=0.1)
    s.abort()
    assert srv.failed.wait(2)
    srv.listener.close()


_json = st.recursive(
    st.none() | st.booleans() | st.integers(-2**53, 2**53) | st.text(max_size=200),
    lambda kids: st.lists(kids, max_size=8) | st.dictionaries(st.text(max_size=10), kids, max_size=8),
    max_leaves=60,
)


@given(st.sampled_from(["Task", "Collection", "Control", "Result"]), st.integers(0, 9), _json,
       st.binary(max_size=2**20).map(bytes.hex))
@settings(max_examples=200, deadline=None)
def test_envelope_frame_roundtrip(kind, priority, body, blob):
    env = Envelope(kind, {"body": body, "blob": blob[: 2**19]}, priority)
    raw = env.to_json().encode("utf-8")
    frame = encode_frame(raw)
    back = decode_frame(io.BytesIO(frame))
    assert back == raw
    assert Envelope.from_json(back.decode("utf-8")) == env


def test_concurrent_sessions_do_not_cross():
    srv = _Server(heartbeat=0.2)
    clients = [connect("127.0.0.1", srv.listener.port, Hello(f"c{i}"), lambda *_: None, heartbeat=0.2)
               for i in range(2)]

    def stream(i, s):
        for n in range(500):
            s.send({"t": "env", "from": f"c{i}", "n": n, "pad": "x" * (n % 97)})

    threads = [threading.Thread(target=stream, args=(i, s)) for i, s in enumerate(clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    deadline = time.monotonic() + 5
    while len(srv.records) < 1000 and time.monotonic() < deadline:
        time.sleep(0.01)
    for i in range(2):
        ns = [r["n"] for r in srv.records if r["from"] == f"c{i}"]
        assert ns == list(range(500))
    for s in clients:
        s.close()
    srv.listener.close()
