"""Two-node migration over TCP.

Wire layout of one message (all integers big-endian)::

    magic (8 bytes) | version (1 byte) | body length (u64) | body

A migration request body is a sequence of u32-length-prefixed sections:
resume token, dump, file count (u32), then name and content per file.  The
reply body is a single JSON document.  The server handles one connection at
a time and answers every malformed request with an error reply.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .errors import ConnectionFailure, ProtocolError, ReflexecError
from .files import host_path
from .harness import MigrationReport, Session, checkpoint, describe, restore
from .pickling import FAIL, ErrorPolicy

MAGIC = b"RFXMIGR\x00"
VERSION = 1
MAX_BODY = 256 * 1024 * 1024
IO_TIMEOUT = 10.0

_HEAD = struct.Struct(">8sBQ")
_U32 = struct.Struct(">I")


@dataclass
class NodeConfig:
    listen: str = "127.0.0.1:0"
    root: str = "."
    fuel: int | None = None
    policy: str = "fail"

    def validate(self) -> None:
        root = Path(self.root)
        if not root.is_dir() or not os.access(root, os.W_OK):
            raise ValueError(f"transfer root {self.root!r} is not a writable directory")
        parse_address(self.listen)
        ErrorPolicy.named(self.policy)


@dataclass
class Envelope:
    dump: bytes
    files: list[tuple[str, bytes]] = field(default_factory=list)
    token: str = ""


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


# -- framing -----------------------------------------------------------------

def frame(body: bytes) -> bytes:
    return _HEAD.pack(MAGIC, VERSION, len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ProtocolError(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> bytes:
    magic, version, length = _HEAD.unpack(_recv_exact(sock, _HEAD.size))
    if magic != MAGIC:
        raise ProtocolError("bad magic")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_BODY:
        raise ProtocolError(f"message length {length} exceeds the limit")
    return _recv_exact(sock, length)


def encode_envelope(env: Envelope) -> bytes:
    parts = []

    def section(data: bytes):
        parts.append(_U32.pack(len(data)))
        parts.append(data)

    section(env.token.encode("utf-8"))
    section(env.dump)
    parts.append(_U32.pack(len(env.files)))
    for fname, content in env.files:
        section(fname.encode("utf-8"))
        section(content)
    return b"".join(parts)


def decode_envelope(body: bytes) -> Envelope:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise ProtocolError("length mismatch: section runs past the message")
        out = body[pos:pos + n]
        pos += n
        return out

    def section() -> bytes:
        return take(_U32.unpack(take(4))[0])

    try:
        token = section().decode("utf-8")
        dump = section()
        files = []
        for _ in range(_U32.unpack(take(4))[0]):
            files.append((section().decode("utf-8"), section()))
    except UnicodeDecodeError:
        raise ProtocolError("section is not UTF-8") from None
    if pos != len(body):
        raise ProtocolError("length mismatch: trailing bytes after the last section")
    return Envelope(dump, files, token)


def safe_relative(name: str) -> str:
    p = PurePosixPath(name)
    if not name or p.is_absolute() or ".." in p.parts or "\\" in name:
        raise ProtocolError(f"refusing file path {name!r}")
    return str(p)


# -- receiver ----------------------------------------------------------------

def handle_request(body: bytes, config: NodeConfig) -> dict:
    """Install files, restore and finish the migrated program."""
    started = time.perf_counter()
    env = decode_envelope(body)
    for fname, content in env.files:
        target = host_path(config.root, safe_relative(fname))
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
    report = MigrationReport()
    session = restore(env.dump, file_root=config.root, fuel=config.fuel, report=report)
    value = session.finish()
    return {
        "ok": True,
        "token": env.token,
        "output": list(session.output),
        "value": describe(session, value),
        "load_ms": report.load_ms,
        "restore_ms": report.restore_ms,
        "frame_count": report.frame_count,
        "server_ms": (time.perf_counter() - started) * 1000.0,
    }


def _reply(sock: socket.socket, payload: dict) -> None:
    try:
        sock.sendall(frame(json.dumps(payload).encode("utf-8")))
        # half-close and drain so unread request bytes do not turn the close
        # into a reset that destroys the reply in flight
        sock.shutdown(socket.SHUT_WR)
        sock.settimeout(0.5)
        drained = 0
        while drained < (1 << 20):
            chunk = sock.recv(65536)
            if not chunk:
                break
            drained += len(chunk)
    except OSError:
        pass


def serve_connection(conn: socket.socket, config: NodeConfig) -> dict:
    conn.settimeout(IO_TIMEOUT)
    started = time.perf_counter()
    try:
        body = read_message(conn)
        reply = handle_request(body, config)
    except ProtocolError as exc:
        reply = {"ok": False, "kind": "protocol", "error": str(exc)}
    except ReflexecError as exc:
        reply = {"ok": False, "kind": type(exc).__name__, "error": str(exc)}
    except (OSError, struct.error) as exc:
        reply = {"ok": False, "kind": "protocol", "error": str(exc)}
    except Exception as exc:  # the accept loop must survive anything a peer sends
        reply = {"ok": False, "kind": "internal", "error": f"{type(exc).__name__}: {exc}"}
    reply.setdefault("server_ms", (time.perf_counter() - started) * 1000.0)
    _reply(conn, reply)
    return reply


def serve(config: NodeConfig, stop: threading.Event | None = None,
          ready=None, log=None) -> None:
    """Serial accept loop; returns once ``stop`` is set.

    ``ready`` (if given) is called with the bound ``(host, port)``.
    """
    config.validate()
    host, port = parse_address(config.listen)
    stop = stop or threading.Event()
    with socket.create_server((host, port)) as srv:
        srv.settimeout(0.2)
        if ready is not None:
            ready(srv.getsockname()[:2])
        while not stop.is_set():
            try:
                conn, peer = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                if stop.is_set():
                    break
                continue
            with conn:
                reply = serve_connection(conn, config)
            if log is not None:
                log(peer, reply)


class BackgroundServer:
    """Run :func:`serve` on a daemon thread (used by tests and the bench)."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.stop_event = threading.Event()
        self.address: tuple[str, int] | None = None
        self._ready = threading.Event()
        self.thread = threading.Thread(target=self._main, daemon=True)
        self.error: BaseException | None = None

    def _main(self):
        try:
            serve(self.config, self.stop_event, self._bound)
        except BaseException as exc:
            self.error = exc
            self._ready.set()

    def _bound(self, addr):
        self.address = addr
        self._ready.set()

    def __enter__(self) -> BackgroundServer:
        self.thread.start()
        self._ready.wait(10)
        if self.error is not None:
            raise self.error
        return self

    def __exit__(self, *exc):
        self.stop_event.set()
        self.thread.join(5)

    @property
    def alive(self) -> bool:
        return self.thread.is_alive()

    @property
    def address_text(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"


# -- sender ------------------------------------------------------------------

def exchange(address: str | tuple[str, int], body: bytes, timeout: float = 60.0) -> dict:
    host, port = parse_address(address) if isinstance(address, str) else address
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.sendall(frame(body))
            sock.shutdown(socket.SHUT_WR)
            data = read_message(sock)
    except OSError as exc:
        raise ConnectionFailure(f"{host}:{port}: {exc}") from None
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError("malformed reply") from None


@dataclass
class MigrationResult:
    report: MigrationReport
    local_output: list[str]
    reply: dict


def migrate(session: Session, address, at_yield: int = 1, policy: ErrorPolicy = FAIL,
            token: str = "") -> MigrationResult:
    """Checkpoint ``session`` at a yield and finish it on the node at ``address``."""
    cp = checkpoint(session, at_yield, policy)
    files = []
    for rec in cp.doc.files:
        files.append((rec.path, host_path(session.state.file_root, rec.path).read_bytes()))
    body = encode_envelope(Envelope(cp.data, files, token))
    started = time.perf_counter()
    reply = exchange(address, body)
    rtt_ms = (time.perf_counter() - started) * 1000.0
    report = cp.report
    report.payload_bytes = len(cp.data)
    report.transmit_ms = max(0.0, (rtt_ms - float(reply.get("server_ms", 0.0))) / 2.0)
    report.load_ms = float(reply.get("load_ms", 0.0))
    report.restore_ms = float(reply.get("restore_ms", 0.0))
    return MigrationResult(report, cp.output, reply)


__all__ = [
    "BackgroundServer", "Envelope", "MAGIC", "MigrationResult", "NodeConfig", "VERSION",
    "decode_envelope", "encode_envelope", "exchange", "frame", "migrate",
    "parse_address", "read_message", "serve",
]
