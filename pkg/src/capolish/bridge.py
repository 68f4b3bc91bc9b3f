"""Client side of the scorer wire protocol, plus a reference server.

A session is one connection with strict request/reply alternation; runs
that want concurrency open their own sessions. Transport failures are
retried twice with backoff after reconnecting and replaying session
state (handshake, image registration); protocol violations are never
retried.

The :class:`RecordingTransport` / :class:`ReplayTransport` pair captures
live sessions into line fixtures and replays them byte-for-byte, which
is how engine runs against a remote server are regression-tested without
the server.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import protocol
from .core import BackendManifest, Vocabulary
from .errors import (
    CapabilityError,
    ProtocolError,
    StaleHandleError,
    TransportError,
)

RETRY_LIMIT = 2
RETRY_BACKOFF_S = 0.05


@dataclass(frozen=True)
class ImageHandle:
    """Server-assigned identifier for a registered image."""

    value: str


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class Transport:
    """One bidirectional line stream. Implementations are single-session."""

    def send_line(self, line: bytes) -> None:
        raise NotImplementedError

    def recv_line(self) -> bytes:
        raise NotImplementedError

    def reconnect(self) -> None:
        raise TransportError("this transport cannot reconnect")

    def close(self) -> None:
        pass


class StdioTransport(Transport):
    """Talk to a child process over its stdin/stdout."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._start()

    def _start(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise TransportError(f"cannot start {self.command[0]!r}: {exc}") from exc

    def send_line(self, line: bytes) -> None:
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"server pipe closed: {exc}") from exc

    def recv_line(self) -> bytes:
        line = self.proc.stdout.readline()
        if not line:
            raise TransportError("server closed the connection")
        return line

    def reconnect(self) -> None:
        self.close()
        self._start()

    def close(self) -> None:
        self.proc.stdin.close()
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self.proc.stdout.close()


class TcpTransport(Transport):
    """Talk to a server over a TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._connect()

    def _connect(self) -> None:
        try:
            self.sock = socket.create_connection((self.host, self.port), self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {self.host}:{self.port}: {exc}") from exc
        self.reader = self.sock.makefile("rb")

    def send_line(self, line: bytes) -> None:
        try:
            self.sock.sendall(line)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_line(self) -> bytes:
        try:
            line = self.reader.readline()
        except OSError as exc:
            raise TransportError(f"recv failed: {exc}") from exc
        if not line:
            raise TransportError("server closed the connection")
        return line

    def reconnect(self) -> None:
        self.close()
        self._connect()

    def close(self) -> None:
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


class LoopbackTransport(Transport):
    """In-process transport bound to a :class:`ProtocolServer` session."""

    def __init__(self, server: "ProtocolServer"):
        self.server = server
        self._pending: bytes | None = None

    def send_line(self, line: bytes) -> None:
        if self._pending is not None:
            raise ProtocolError("request sent before the previous reply was read")
        self._pending = self.server.handle_line(line)

    def recv_line(self) -> bytes:
        if self._pending is None:
            raise ProtocolError("no reply pending")
        line, self._pending = self._pending, None
        return line

    def reconnect(self) -> None:
        self._pending = None


class RecordingTransport(Transport):
    """Wrap a transport and append every line to a fixture file."""

    def __init__(self, inner: Transport, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.path.write_bytes(b"")

    def _record(self, direction: str, line: bytes) -> None:
        entry = {"dir": direction, "data": line.decode("utf-8").rstrip("\n")}
        with self.path.open("ab") as fh:
            fh.write(protocol.dump_line(entry))

    def send_line(self, line: bytes) -> None:
        self.inner.send_line(line)
        self._record(">", line)

    def recv_line(self) -> bytes:
        line = self.inner.recv_line()
        self._record("<", line)
        return line

    def close(self) -> None:
        self.inner.close()


class ReplayTransport(Transport):
    """Replay a recorded fixture, insisting on byte-identical requests."""

    def __init__(self, path: str | Path):
        self.entries = []
        for raw in Path(path).read_bytes().splitlines():
            if raw.strip():
                self.entries.append(protocol.parse_line(raw))
        self.cursor = 0

    def _next(self, direction: str) -> str:
        if self.cursor >= len(self.entries):
            raise ProtocolError("replay fixture exhausted")
        entry = self.entries[self.cursor]
        self.cursor += 1
        if entry.get("dir") != direction:
            raise ProtocolError(
                f"fixture expected direction {entry.get('dir')!r}, got {direction!r}"
            )
        return entry["data"]

    def send_line(self, line: bytes) -> None:
        expected = self._next(">")
        actual = line.decode("utf-8").rstrip("\n")
        if actual != expected:
            raise ProtocolError(
                f"request diverged from fixture:\n  expected: {expected}\n  actual:   {actual}"
            )

    def recv_line(self) -> bytes:
        return (self._next("<") + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Reference server
# ---------------------------------------------------------------------------


class ProtocolServer:
    """Serve one session of the wire protocol over any ScorerBackend.

    This is the reference implementation used for loopback runs and for
    recording fixtures. Malformed input produces an error reply; the
    server never raises out of :meth:`handle_line`.
    """

    def __init__(self, backend):
        self.backend = backend
        self.images: dict[str, bytes] = {}

    def handle_line(self, line: bytes) -> bytes:
        try:
            request = protocol.parse_line(line)
        except ProtocolError as exc:
            return protocol.dump_line(protocol.error_reply(None, "bad_request", str(exc)))
        request_id = request.get("id")
        try:
            reply = self._dispatch(request)
        except ProtocolError as exc:
            reply = protocol.error_reply(request_id, "bad_request", str(exc))
        except Exception as exc:  # noqa: BLE001 - reply instead of crashing
            reply = protocol.error_reply(request_id, "internal", str(exc))
        return protocol.dump_line(reply)

    def _dispatch(self, request: dict) -> dict:
        op = request.get("op")
        request_id = request.get("id")
        if not isinstance(request_id, int):
            return protocol.error_reply(None, "bad_request", "missing integer 'id'")
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            return protocol.error_reply(request_id, "unsupported_op", f"unknown op {op!r}")
        return handler(request)

    def _ok(self, request: dict, **fields) -> dict:
        return {"id": request["id"], "ok": True, **fields}

    def _op_handshake(self, request: dict) -> dict:
        low = protocol.require(request, "min_protocol", int)
        high = protocol.require(request, "max_protocol", int)
        if not low <= protocol.PROTOCOL_VERSION <= high:
            return protocol.error_reply(
                request["id"],
                "version_mismatch",
                f"server speaks protocol {protocol.PROTOCOL_VERSION}",
            )
        m = self.backend.manifest()
        vocab = self.backend.vocab
        return self._ok(
            request,
            protocol=protocol.PROTOCOL_VERSION,
            vocab_size=m.vocab_size,
            mask_id=m.mask_id,
            pad_id=m.pad_id,
            surface=list(vocab.surface),
            ops=sorted(m.supported_ops),
            control_tasks=sorted(m.supported_control_tasks),
            model_tags=list(m.model_tags),
            embed_dim=m.embed_dim,
        )

    def _op_register_image(self, request: dict) -> dict:
        if "bytes_b64" in request:
            try:
                content = base64.b64decode(request["bytes_b64"], validate=True)
            except Exception as exc:
                return protocol.error_reply(
                    request["id"], "decode_error", f"bad image bytes: {exc}"
                )
        elif "path" in request:
            path = Path(protocol.require(request, "path", str))
            if not path.is_file():
                return protocol.error_reply(
                    request["id"], "decode_error", f"no such image {path}"
                )
            content = path.read_bytes()
        else:
            return protocol.error_reply(
                request["id"], "bad_request", "register_image needs 'path' or 'bytes_b64'"
            )
        handle = "img-" + hashlib.sha256(content).hexdigest()[:12]
        self.images[handle] = content
        return self._ok(request, handle=handle)

    def _op_mlm_topk(self, request: dict) -> dict:
        tokens = protocol.require_int_list(request, "tokens")
        mask_pos = protocol.require(request, "mask_pos", int)
        k = protocol.require(request, "k", int)
        must = protocol.require_int_list(request, "must_include") if "must_include" in request else []
        pairs = self.backend.mlm_topk(tokens, mask_pos, k, must_include=must)
        return self._ok(
            request,
            token_ids=[t for t, _ in pairs],
            probs=protocol.encode_floats([p for _, p in pairs]),
        )

    def _op_match(self, request: dict) -> dict:
        handle = protocol.require(request, "handle", str)
        if handle not in self.images:
            return protocol.error_reply(
                request["id"], "stale_handle", f"unknown image handle {handle!r}"
            )
        rows = protocol.require(request, "token_rows", list)
        texts = protocol.require(request, "texts", list)
        scores = self.backend.match_scores(rows, texts)
        return self._ok(
            request,
            scores=protocol.encode_floats(scores),
            truncated=[False] * len(scores),
        )

    def _op_control(self, request: dict) -> dict:
        protocol.require(request, "task", str)
        rows = protocol.require(request, "token_rows", list)
        texts = protocol.require(request, "texts", list)
        try:
            scores = self.backend.control_scores(rows, texts)
        except RuntimeError as exc:
            return protocol.error_reply(request["id"], "unsupported_task", str(exc))
        return self._ok(request, scores=protocol.encode_floats(scores))

    def _op_embed(self, request: dict) -> dict:
        texts = protocol.require(request, "texts", list)
        vectors = self.backend.embed(texts)
        dim = len(vectors[0]) if vectors else (self.backend.manifest().embed_dim or 0)
        return self._ok(
            request,
            dim=dim,
            vectors=[protocol.encode_floats(v) for v in vectors],
        )

    def _op_encode(self, request: dict) -> dict:
        text = protocol.require(request, "text", str)
        try:
            ids = self.backend.vocab.encode(text)
        except ValueError as exc:
            return protocol.error_reply(request["id"], "encode_error", str(exc))
        return self._ok(request, token_ids=ids)


def serve_stdio(backend) -> None:
    """Blocking stdio server loop around a backend (one session)."""
    import sys

    server = ProtocolServer(backend)
    for line in sys.stdin.buffer:
        sys.stdout.buffer.write(server.handle_line(line))
        sys.stdout.buffer.flush()


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class RemoteBackend:
    """ScorerBackend over a wire transport.

    The constructor performs the handshake. ``register_image`` (or
    ``use_image``) selects the image all subsequent match queries score
    against. ``control_task_tag`` names the control scorer for control
    queries.
    """

    def __init__(self, transport: Transport, control_task_tag: str = "none"):
        self.transport = transport
        self.control_task_tag = control_task_tag
        self._next_id = 0
        self._handle: ImageHandle | None = None
        self._registered_source: dict | None = None
        self._manifest, self._vocab = self._handshake()

    # -- session plumbing ---------------------------------------------------

    def _call(self, op: str, **fields) -> dict:
        request_id = self._next_id
        self._next_id += 1
        line = protocol.dump_line(protocol.build_request(op, request_id, **fields))
        attempts = 0
        needs_resume = False
        while True:
            try:
                if needs_resume:
                    self.transport.reconnect()
                    self._resume_session()
                    needs_resume = False
                self.transport.send_line(line)
                reply_line = self.transport.recv_line()
                break
            except TransportError:
                attempts += 1
                if attempts > RETRY_LIMIT:
                    raise
                time.sleep(RETRY_BACKOFF_S * attempts)
                needs_resume = True
        reply = protocol.parse_line(reply_line)
        try:
            return protocol.check_reply(reply, request_id)
        except ProtocolError as exc:
            if getattr(exc, "code", None) == "stale_handle":
                raise StaleHandleError(str(exc)) from exc
            raise

    def _raw_call(self, op: str, **fields) -> dict:
        """One un-retried request/reply used during session setup."""
        request_id = self._next_id
        self._next_id += 1
        self.transport.send_line(
            protocol.dump_line(protocol.build_request(op, request_id, **fields))
        )
        return protocol.check_reply(
            protocol.parse_line(self.transport.recv_line()), request_id
        )

    def _handshake(self) -> tuple[BackendManifest, Vocabulary]:
        reply = self._raw_call(
            "handshake",
            min_protocol=protocol.PROTOCOL_VERSION,
            max_protocol=protocol.PROTOCOL_VERSION,
            client="capolish",
        )
        version = protocol.require(reply, "protocol", int)
        if version != protocol.PROTOCOL_VERSION:
            raise ProtocolError(f"server negotiated unsupported protocol {version}")
        surface = protocol.require(reply, "surface", list)
        manifest = BackendManifest(
            protocol_version=version,
            vocab_size=protocol.require(reply, "vocab_size", int),
            mask_id=protocol.require(reply, "mask_id", int),
            pad_id=reply.get("pad_id"),
            supported_ops=tuple(protocol.require(reply, "ops", list)),
            supported_control_tasks=tuple(reply.get("control_tasks", [])),
            model_tags=tuple(reply.get("model_tags", [])),
            embed_dim=reply.get("embed_dim"),
        )
        if manifest.mask_id >= manifest.vocab_size:
            raise ProtocolError("manifest mask_id out of range")
        if len(surface) != manifest.vocab_size:
            raise ProtocolError("surface table does not match vocab_size")
        vocab = Vocabulary(
            size=manifest.vocab_size,
            mask_id=manifest.mask_id,
            surface=tuple(surface),
            pad_id=manifest.pad_id,
        )
        return manifest, vocab

    def _resume_session(self) -> None:
        manifest, vocab = self._handshake()
        if manifest.hash() != self._manifest.hash():
            raise ProtocolError("server manifest changed across reconnect")
        self._manifest, self._vocab = manifest, vocab
        if self._registered_source is not None:
            reply = self._raw_call("register_image", **self._registered_source)
            self._handle = ImageHandle(protocol.require(reply, "handle", str))

    # -- ScorerBackend ------------------------------------------------------

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def manifest(self) -> BackendManifest:
        return self._manifest

    def require_op(self, op: str) -> None:
        if op not in self._manifest.supported_ops:
            raise CapabilityError(f"backend does not support the {op!r} op")

    def register_image(
        self, path: str | Path | None = None, data: bytes | None = None
    ) -> ImageHandle:
        self.require_op("register_image")
        if (path is None) == (data is None):
            raise ValueError("register_image takes exactly one of path or data")
        if path is not None:
            source = {"path": str(path)}
        else:
            source = {"bytes_b64": base64.b64encode(data).decode("ascii")}
        reply = self._call("register_image", **source)
        self._registered_source = source
        self._handle = ImageHandle(protocol.require(reply, "handle", str))
        return self._handle

    def use_image(self, handle: ImageHandle) -> None:
        self._handle = handle

    def mlm_topk(
        self,
        tokens: Sequence[int],
        mask_pos: int,
        k: int,
        must_include: Sequence[int] = (),
    ) -> list[tuple[int, float]]:
        fields = {"tokens": list(tokens), "mask_pos": mask_pos, "k": k}
        if must_include:
            fields["must_include"] = list(must_include)
        reply = self._call("mlm_topk", **fields)
        ids = protocol.require_int_list(reply, "token_ids")
        probs = protocol.parse_floats(protocol.require(reply, "probs", list))
        if len(ids) != len(probs):
            raise ProtocolError("token_ids and probs lengths differ")
        if not ids:
            raise ProtocolError("mlm_topk returned no candidates")
        head = min(k, len(probs))
        for a, b in zip(probs[: head - 1], probs[1:head]):
            if b > a:
                raise ProtocolError("mlm_topk probabilities are not descending")
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ProtocolError(f"mlm probability {p} outside [0, 1]")
        return list(zip(ids, probs))

    def match_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]:
        if self._handle is None:
            raise StaleHandleError("no image registered for this session")
        reply = self._call(
            "match",
            handle=self._handle.value,
            token_rows=[list(r) for r in token_rows],
            texts=list(texts),
        )
        scores = protocol.parse_floats(protocol.require(reply, "scores", list))
        if len(scores) != len(texts):
            raise ProtocolError("match returned a wrong number of scores")
        return scores

    def control_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]:
        self.require_op("control")
        reply = self._call(
            "control",
            task=self.control_task_tag,
            token_rows=[list(r) for r in token_rows],
            texts=list(texts),
        )
        scores = protocol.parse_floats(protocol.require(reply, "scores", list))
        if len(scores) != len(texts):
            raise ProtocolError("control returned a wrong number of scores")
        return scores

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        self.require_op("embed")
        reply = self._call("embed", texts=list(texts))
        dim = protocol.require(reply, "dim", int)
        vectors = [
            protocol.parse_floats(v) for v in protocol.require(reply, "vectors", list)
        ]
        if len(vectors) != len(texts):
            raise ProtocolError("embed returned a wrong number of vectors")
        for v in vectors:
            if len(v) != dim:
                raise ProtocolError("embedding dimension mismatch")
        return vectors

    def encode(self, text: str) -> list[int]:
        if "encode" in self._manifest.supported_ops:
            reply = self._call("encode", text=text)
            return protocol.require_int_list(reply, "token_ids")
        return self._vocab.encode(text)

    def close(self) -> None:
        self.transport.close()
