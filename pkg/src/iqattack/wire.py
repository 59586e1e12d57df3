"""Wire protocol for out-of-process quality oracles.

Framing is one JSON object per UTF-8 line.  The server's first line is the
handshake ``{"proto": "iqa-oracle/1", "beta1": ..., "beta2": ...}``; requests
are ``{"id", "h", "w", "c", "data_b64"}`` where ``data_b64`` is base64 of the
raw little-endian f32 row-major tensor, and responses echo the id with either
a finite ``score`` or an ``error`` string.  Floats travel as raw bits, so a
served built-in scorer is bit-identical to calling it in process.  One
request is in flight per connection at a time.
"""

from __future__ import annotations

import base64
import json
import os
import select
import shlex
import socket
import socketserver
import subprocess
import sys
import threading
import time

import numpy as np

from .image import ImageTensor
from .oracle import OracleFailure, QualityOracle, ScoreBounds, _QueryCounter

PROTO_VERSION = "iqa-oracle/1"
DEFAULT_TIMEOUT = 30.0


class OracleTransportError(OracleFailure):
    """Connection, framing or protocol violation while talking to an oracle."""


def encode_tensor(img: ImageTensor) -> str:
    return base64.b64encode(img.array.astype("<f4").tobytes()).decode("ascii")


def decode_tensor(h: int, w: int, c: int, data_b64: str) -> ImageTensor:
    try:
        raw = base64.b64decode(data_b64, validate=True)
    except Exception as exc:
        raise ValueError(f"invalid base64 payload: {exc}") from exc
    expected = 4 * h * w * c
    if len(raw) != expected:
        raise ValueError(f"payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
    return ImageTensor(arr.astype(np.float64))


def handshake_line(bounds: ScoreBounds) -> str:
    return json.dumps(
        {"proto": PROTO_VERSION, "beta1": bounds.beta1, "beta2": bounds.beta2}
    )


# ---------------------------------------------------------------------------
# line channels (client side)


class _LineChannel:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> str:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _SubprocessChannel(_LineChannel):
    def __init__(self, argv: list[str]):
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as exc:
            raise OracleTransportError(f"cannot start oracle process {argv!r}: {exc}") from exc
        self._buffer = b""

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:  # ValueError: write after close
            raise OracleTransportError(f"oracle process pipe broken: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTransportError(f"oracle response timed out after {timeout}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise OracleTransportError("oracle process closed its output")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpChannel(_LineChannel):
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise OracleTransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._buffer = b""

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise OracleTransportError(f"oracle socket send failed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTransportError(f"oracle response timed out after {timeout}s")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout as exc:
                raise OracleTransportError(f"oracle response timed out after {timeout}s") from exc
            except OSError as exc:
                raise OracleTransportError(f"oracle socket recv failed: {exc}") from exc
            if not chunk:
                raise OracleTransportError("oracle closed the connection")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


# ---------------------------------------------------------------------------
# client oracle


class ExternalOracle(QualityOracle):
    """QualityOracle backed by a wire-protocol server; one request in flight."""

    def __init__(self, channel: _LineChannel, bounds: ScoreBounds, timeout: float):
        self._channel = channel
        self._bounds = bounds
        self._timeout = timeout
        self._counter = _QueryCounter()
        self._next_id = 1
        self._lock = threading.Lock()
        self._verify_handshake()

    def _verify_handshake(self) -> None:
        line = self._channel.recv_line(self._timeout)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleTransportError(f"malformed handshake: {line!r}") from exc
        if msg.get("proto") != PROTO_VERSION:
            raise OracleTransportError(f"unexpected protocol {msg.get('proto')!r}")
        if msg.get("beta1") != self._bounds.beta1 or msg.get("beta2") != self._bounds.beta2:
            raise OracleTransportError(
                f"server bounds ({msg.get('beta1')}, {msg.get('beta2')}) do not match "
                f"configured bounds ({self._bounds.beta1}, {self._bounds.beta2})"
            )

    def score(self, img: ImageTensor) -> float:
        with self._lock:
            self._counter.increment()
            request_id = self._next_id
            self._next_id += 1
            request = {
                "id": request_id,
                "h": img.height,
                "w": img.width,
                "c": img.channels,
                "data_b64": encode_tensor(img),
            }
            self._channel.send_line(json.dumps(request))
            line = self._channel.recv_line(self._timeout)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleTransportError(f"malformed response: {line!r}") from exc
        if msg.get("id") != request_id:
            raise OracleTransportError(
                f"response id {msg.get('id')} does not match request id {request_id}"
            )
        if "error" in msg:
            raise OracleTransportError(f"oracle error: {msg['error']}")
        if "score" not in msg:
            raise OracleTransportError(f"response carries neither score nor error: {line!r}")
        value = msg["score"]
        if not isinstance(value, (int, float)) or not np.isfinite(value):
            raise OracleTransportError(f"non-finite score in response: {value!r}")
        return self._bounds.clamp(float(value))

    def bounds(self) -> ScoreBounds:
        return self._bounds

    def queries_used(self) -> int:
        return self._counter.value

    def close(self) -> None:
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_external_oracle(
    transport: str, bounds: ScoreBounds, timeout: float = DEFAULT_TIMEOUT
) -> ExternalOracle:
    """Attach to an oracle server.

    ``transport`` is ``cmd:<shell command>`` (stdio subprocess) or
    ``tcp:<host>:<port>``.
    """
    if transport.startswith("cmd:"):
        argv = shlex.split(transport[len("cmd:") :])
        if not argv:
            raise ValueError("empty oracle command")
        return ExternalOracle(_SubprocessChannel(argv), bounds, timeout)
    if transport.startswith("tcp:"):
        rest = transport[len("tcp:") :]
        host, _, port_str = rest.rpartition(":")
        if not host or not port_str.isdigit():
            raise ValueError(f"bad tcp transport {transport!r}, expected tcp:host:port")
        return ExternalOracle(_TcpChannel(host, int(port_str), timeout), bounds, timeout)
    raise ValueError(f"unknown transport {transport!r} (expected cmd:... or tcp:host:port)")


# ---------------------------------------------------------------------------
# server side


def handle_request_line(line: str, scorer: QualityOracle) -> str:
    """Answer one request line; malformed input yields an error response."""
    request_id = 0
    try:
        msg = json.loads(line)
        if isinstance(msg.get("id"), int) and msg["id"] >= 0:
            request_id = msg["id"]
        h, w, c = msg["h"], msg["w"], msg["c"]
        if not all(isinstance(v, int) and v > 0 for v in (h, w, c)):
            raise ValueError(f"invalid shape ({h}, {w}, {c})")
        img = decode_tensor(h, w, c, msg["data_b64"])
        score = scorer.score(img)
        if not np.isfinite(score):
            raise ValueError(f"scorer produced non-finite score {score!r}")
        return json.dumps({"id": request_id, "score": score})
    except Exception as exc:
        return json.dumps({"id": request_id, "error": str(exc)})


def serve_stdio(scorer: QualityOracle) -> None:
    """Serve requests on stdin/stdout until EOF; faults stay per-request."""
    out = sys.stdout
    out.write(handshake_line(scorer.bounds()) + "\n")
    out.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        out.write(handle_request_line(line, scorer) + "\n")
        out.flush()


class OracleTcpServer:
    """Threaded TCP server exposing one scorer; connections are independent,
    request handling within a connection is sequential."""

    def __init__(self, scorer: QualityOracle, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                self.wfile.write((handshake_line(outer.scorer.bounds()) + "\n").encode("utf-8"))
                for raw in self.rfile:
                    line = raw.decode("utf-8").strip()
                    if not line:
                        continue
                    reply = handle_request_line(line, outer.scorer)
                    self.wfile.write((reply + "\n").encode("utf-8"))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.scorer = scorer
        self._server = Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address  # type: ignore[return-value]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


def serve_builtin(scorer: QualityOracle, transport: str) -> None:
    """Run a built-in scorer behind the wire protocol until terminated.

    ``transport`` is ``stdio`` or ``tcp:<host>:<port>``.
    """
    if transport == "stdio":
        serve_stdio(scorer)
        return
    if transport.startswith("tcp:"):
        rest = transport[len("tcp:") :]
        host, _, port_str = rest.rpartition(":")
        if not host:
            host, port_str = "127.0.0.1", rest
        server = OracleTcpServer(scorer, host, int(port_str))
        print(f"listening on {server.address[0]}:{server.address[1]}", file=sys.stderr)
        server.serve_forever()
        return
    raise ValueError(f"unknown server transport {transport!r}")
