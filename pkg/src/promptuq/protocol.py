"""External simulator protocol: newline-delimited JSON over stdio or TCP.

The server speaks first with a handshake line

    {"protocol": 1, "classes": C, "feature_dim": F, "prompt_dim": D,
     "modes": ["logits", "labels"]}

then answers one request per line:

    request  {"id": u64, "mode": "logits"|"labels", "z": [f64...],
              "inputs": [[f64...]...], "decode": "argmax"|"sample", "seed": u64}
    response {"id": u64, "outputs": [[f64...]...]}   (logits mode, rows sum to 1)
             {"id": u64, "labels": [u32...]}         (labels mode)
             {"id": u64, "error": str, "kind": str}  (failure)

``decode`` and ``seed`` only matter in labels mode; sample decoding is driven
entirely by the request seed so a served simulator reproduces in-process
results bit for bit.
"""

from __future__ import annotations

import json
import os
import select
import socket
import socketserver
import subprocess
import sys

import numpy as np

from .blackbox import EvalBudget, draw_decode_seed
from .errors import AccessDeniedError, BudgetExhaustedError, ProtocolError

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0


def _encode(payload: dict) -> bytes:
    return (json.dumps(payload) + "\n").encode("utf-8")


class PipeTransport:
    """Line framing over a child process's stdin/stdout."""

    def __init__(self, proc: subprocess.Popen, timeout: float | None):
        self._proc = proc
        self._timeout = timeout
        self._buffer = bytearray()

    def readline(self) -> bytes:
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            ready, _, _ = select.select([fd], [], [], self._timeout)
            if not ready:
                raise ProtocolError(f"timed out after {self._timeout}s waiting for server")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ProtocolError("server closed the connection")
            self._buffer.extend(chunk)
        line, _, rest = bytes(self._buffer).partition(b"\n")
        self._buffer = bytearray(rest)
        return line

    def writeline(self, data: bytes) -> None:
        self._proc.stdin.write(data)
        self._proc.stdin.flush()

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        self._proc.wait(timeout=5)


class SocketTransport:
    """Line framing over a TCP socket."""

    def __init__(self, sock: socket.socket, timeout: float | None):
        sock.settimeout(timeout)
        self._sock = sock
        self._timeout = timeout
        self._buffer = bytearray()

    def readline(self) -> bytes:
        while b"\n" not in self._buffer:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout as exc:
                raise ProtocolError(
                    f"timed out after {self._timeout}s waiting for server") from exc
            if not chunk:
                raise ProtocolError("server closed the connection")
            self._buffer.extend(chunk)
        line, _, rest = bytes(self._buffer).partition(b"\n")
        self._buffer = bytearray(rest)
        return line

    def writeline(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        self._sock.close()


class ExternalSimulator:
    """Client handle with the same query surface as the built-in simulator."""

    def __init__(self, transport, budget: EvalBudget | None = None):
        self._transport = transport
        self._next_id = 0
        self.budget = budget if budget is not None else EvalBudget()
        handshake = self._read_payload()
        if handshake.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported handshake: {handshake}")
        try:
            self.classes = int(handshake["classes"])
            self.feature_dim = int(handshake["feature_dim"])
            self.prompt_dim = int(handshake["prompt_dim"])
            self.modes = tuple(handshake["modes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed handshake: {handshake}") from exc

    @classmethod
    def spawn(cls, argv: list[str], timeout: float | None = DEFAULT_TIMEOUT,
              budget: EvalBudget | None = None) -> "ExternalSimulator":
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return cls(PipeTransport(proc, timeout), budget=budget)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = DEFAULT_TIMEOUT,
                budget: EvalBudget | None = None) -> "ExternalSimulator":
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(SocketTransport(sock, timeout), budget=budget)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def _read_payload(self) -> dict:
        line = self._transport.readline()
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable server line: {line[:200]!r}") from exc
        if not isinstance(payload, dict):
            raise ProtocolError(f"expected a JSON object, got: {line[:200]!r}")
        return payload

    def _roundtrip(self, request: dict) -> dict:
        request_id = self._next_id
        self._next_id += 1
        request["id"] = request_id
        self._transport.writeline(_encode(request))
        response = self._read_payload()
        if "error" in response:
            kind = response.get("kind", "")
            message = f"server error: {response['error']}"
            if kind == "access-denied":
                raise AccessDeniedError(message)
            if kind == "budget":
                raise BudgetExhaustedError(message)
            raise ProtocolError(message)
        if response.get("id") != request_id:
            raise ProtocolError(
                f"response id {response.get('id')} does not match request {request_id}")
        return response

    def query_logits(self, z: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        if "logits" not in self.modes:
            raise AccessDeniedError("server is labels-only; probabilities are hidden")
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.budget.charge(len(inputs))
        response = self._roundtrip({
            "mode": "logits",
            "z": [float(v) for v in np.asarray(z, dtype=float)],
            "inputs": inputs.tolist(),
        })
        outputs = response.get("outputs")
        if (not isinstance(outputs, list) or len(outputs) != len(inputs)
                or any(len(row) != self.classes for row in outputs)):
            raise ProtocolError(f"malformed outputs for {len(inputs)} inputs")
        probs = np.asarray(outputs, dtype=float)
        if not np.isfinite(probs).all() or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
            raise ProtocolError("logits-mode rows do not form probability vectors")
        return probs

    def query_labels(self, z: np.ndarray, inputs: np.ndarray,
                     decode: str = "argmax",
                     rng: np.random.Generator | None = None) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if decode == "sample":
            if rng is None:
                raise ValueError("sample decode requires an rng")
            seed = draw_decode_seed(rng)
        elif decode == "argmax":
            seed = 0
        else:
            raise ValueError(f"unknown decode {decode!r}")
        self.budget.charge(len(inputs))
        response = self._roundtrip({
            "mode": "labels",
            "z": [float(v) for v in np.asarray(z, dtype=float)],
            "inputs": inputs.tolist(),
            "decode": decode,
            "seed": seed,
        })
        labels = response.get("labels")
        if not isinstance(labels, list) or len(labels) != len(inputs):
            raise ProtocolError(f"malformed labels for {len(inputs)} inputs")
        values = np.asarray(labels)
        if (not np.issubdtype(values.dtype, np.integer)
                or (values < 0).any() or (values >= self.classes).any()):
            raise ProtocolError(f"labels outside [0, {self.classes})")
        return values.astype(np.int64)


def _handle_request(sim, request: dict) -> dict:
    request_id = request.get("id")
    if not isinstance(request_id, int):
        return {"id": None, "error": "missing integer id", "kind": "bad-request"}

    def failure(message: str, kind: str = "bad-request") -> dict:
        return {"id": request_id, "error": message, "kind": kind}

    mode = request.get("mode")
    z = request.get("z")
    inputs = request.get("inputs")
    if not isinstance(z, list) or len(z) != sim.subspace_dim:
        return failure(f"z must have length {sim.subspace_dim}")
    if (not isinstance(inputs, list) or len(inputs) == 0
            or any(not isinstance(row, list) or len(row) != sim.feature_dim
                   for row in inputs)):
        return failure(f"inputs must be nonempty rows of length {sim.feature_dim}")
    z_arr = np.asarray(z, dtype=float)
    x_arr = np.asarray(inputs, dtype=float)

    try:
        if mode == "logits":
            probs = sim.query_logits(z_arr, x_arr)
            return {"id": request_id, "outputs": probs.tolist()}
        if mode == "labels":
            decode = request.get("decode", "argmax")
            if decode == "argmax":
                labels = sim.query_labels(z_arr, x_arr)
            elif decode == "sample":
                seed = request.get("seed")
                if not isinstance(seed, int):
                    return failure("sample decode requires an integer seed")
                labels = sim.sampled_labels(z_arr, x_arr, seed)
            else:
                return failure(f"unknown decode {decode!r}")
            return {"id": request_id, "labels": [int(v) for v in labels]}
        return failure(f"unknown mode {mode!r}")
    except AccessDeniedError as exc:
        return failure(str(exc), kind="access-denied")
    except BudgetExhaustedError as exc:
        return failure(str(exc), kind="budget")


def serve(sim, lines_in, lines_out) -> None:
    """Serve one connection worth of requests from text streams until EOF."""
    handshake = {
        "protocol": PROTOCOL_VERSION,
        "classes": sim.classes,
        "feature_dim": sim.feature_dim,
        "prompt_dim": sim.prompt_dim,
        "modes": ["logits", "labels"] if sim.allow_logits else ["labels"],
    }
    lines_out.write(json.dumps(handshake) + "\n")
    lines_out.flush()
    for line in lines_in:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("not an object")
        except (json.JSONDecodeError, ValueError):
            response = {"id": None, "error": "unparseable request", "kind": "bad-request"}
        else:
            response = _handle_request(sim, request)
        lines_out.write(json.dumps(response) + "\n")
        lines_out.flush()


def serve_stdio(sim) -> None:
    serve(sim, sys.stdin, sys.stdout)


def serve_tcp(sim, host: str, port: int, ready_callback=None) -> None:
    """Blocking TCP server; each connection gets its own handler thread."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            serve(sim,
                  (raw.decode("utf-8") for raw in self.rfile),
                  _SocketWriter(self.wfile))

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        if ready_callback is not None:
            ready_callback(server.server_address)
        server.serve_forever()


class _SocketWriter:
    def __init__(self, wfile):
        self._wfile = wfile

    def write(self, text: str) -> None:
        self._wfile.write(text.encode("utf-8"))

    def flush(self) -> None:
        self._wfile.flush()
