"""Backend specs and transports (subprocess stdio, HTTP, in-process)."""

from __future__ import annotations

import importlib
import itertools
import json
import logging
import os
import shlex
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from concurrent.futures import Future, TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional

import yaml

from ..errors import BackendError, ConfigError
from .protocol import KINDS, decode_request, decode_response, encode_request, error_response, ok_response

log = logging.getLogger(__name__)

TRANSPORTS = ("subprocess", "http", "inproc")
CONF_ENV = "DIALEKTPIPE_BACKEND_CONF"


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    transport: str
    endpoint_or_cmd: str
    timeout_s: float = 60.0
    max_parallel: int = 1
    options: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}; expected one of {KINDS}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"unknown transport {self.transport!r}; expected one of {TRANSPORTS}")
        if not self.timeout_s > 0:
            raise ConfigError(f"{self.kind}: timeout_s must be positive")
        if self.max_parallel < 1:
            raise ConfigError(f"{self.kind}: max_parallel must be >= 1")
        if not self.endpoint_or_cmd:
            raise ConfigError(f"{self.kind}: endpoint_or_cmd is required")

    @classmethod
    def from_dict(cls, kind: str, d: dict) -> "BackendSpec":
        known = {"transport", "endpoint_or_cmd", "endpoint", "cmd", "timeout_s", "max_parallel", "options"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"backend {kind}: unknown keys {sorted(unknown)}")
        target = d.get("endpoint_or_cmd") or d.get("endpoint") or d.get("cmd") or ""
        return cls(
            kind=kind,
            transport=d.get("transport", "subprocess"),
            endpoint_or_cmd=target,
            timeout_s=float(d.get("timeout_s", 60.0)),
            max_parallel=int(d.get("max_parallel", 1)),
            options=dict(d.get("options") or {}),
        )


def load_backend_conf(path=None) -> Dict[str, BackendSpec]:
    """Read a YAML/JSON mapping kind -> spec; defaults to $DIALEKTPIPE_BACKEND_CONF."""
    path = path or os.environ.get(CONF_ENV)
    if not path:
        raise ConfigError(f"no backend configuration given and {CONF_ENV} is not set")
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read backend configuration {path}: {exc}") from None
    return parse_backend_conf(doc)


def parse_backend_conf(doc: dict) -> Dict[str, BackendSpec]:
    if not isinstance(doc, dict):
        raise ConfigError("backend configuration must be a mapping of kind -> spec")
    return {kind: BackendSpec.from_dict(kind, spec or {}) for kind, spec in doc.items()}


class Transport:
    def send(self, req_id: str, kind: str, payload: dict, timeout: float) -> dict:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InprocTransport(Transport):
    """Calls a Python handler directly, still round-tripping through JSON."""

    def __init__(self, handler: Callable[[str, dict], dict]):
        self.handler = handler

    def send(self, req_id, kind, payload, timeout):
        req = decode_request(encode_request(req_id, kind, payload))
        try:
            line = ok_response(req["id"], self.handler(req["kind"], req["payload"]))
        except BackendError:
            raise
        except Exception as exc:
            line = error_response(req["id"], f"{type(exc).__name__}: {exc}")
        return decode_response(line, req_id)


class HttpTransport(Transport):
    def __init__(self, url: str):
        self.url = url

    def send(self, req_id, kind, payload, timeout):
        body = encode_request(req_id, kind, payload).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                text = resp.read().decode("utf-8")
        except TimeoutError:
            raise
        except urllib.error.HTTPError as exc:
            text = exc.read().decode("utf-8", "replace")
            if not text.strip().startswith("{"):
                raise BackendError(f"{self.url}: HTTP {exc.code}") from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise TimeoutError(str(exc.reason)) from None
            raise BackendError(f"{self.url}: {exc.reason}") from None
        return decode_response(text, req_id)


class SubprocessTransport(Transport):
    """One long-lived child speaking newline-delimited JSON on stdin/stdout.

    Requests are pipelined; a reader thread routes responses to waiting
    callers by id, so completion order does not matter.
    """

    def __init__(self, cmd: str):
        argv = shlex.split(cmd)
        if argv and argv[0] in ("python", "python3"):
            argv[0] = sys.executable
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start backend {cmd!r}: {exc}") from None
        self.cmd = cmd
        self._pending: Dict[str, Future] = {}
        self._lock = threading.Lock()
        self._fatal: Optional[BackendError] = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _fail_all(self, err: BackendError) -> None:
        with self._lock:
            self._fatal = self._fatal or err
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(self._fatal)

    def _read_loop(self):
        for line in self.proc.stdout:
            if not line.strip():
                continue
            try:
                resp = decode_response(line)
            except BackendError as exc:
                self._fail_all(exc)
                return
            with self._lock:
                fut = self._pending.pop(resp["id"], None)
            if fut is None:
                # late answer to a request that already timed out
                log.debug("dropping response for unknown id %s", resp["id"])
                continue
            fut.set_result(resp)
        self._fail_all(BackendError(f"backend {self.cmd!r} exited with code {self.proc.wait()}"))

    def send(self, req_id, kind, payload, timeout):
        fut: Future = Future()
        line = encode_request(req_id, kind, payload)
        with self._lock:
            if self._fatal:
                raise self._fatal
            if req_id in self._pending:
                raise BackendError(f"duplicate in-flight request id {req_id!r}")
            self._pending[req_id] = fut
            try:
                self.proc.stdin.write(line + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._pending.pop(req_id, None)
                raise BackendError(f"backend {self.cmd!r} is not accepting requests: {exc}") from None
        try:
            return fut.result(timeout=timeout)
        except FutureTimeout:
            with self._lock:
                self._pending.pop(req_id, None)
            raise TimeoutError(f"no response within {timeout}s") from None

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


def _resolve_handler(target: str, kind: str, options: dict) -> Callable[[str, dict], dict]:
    if target == "stub":
        from .stubs import make_stub

        return make_stub(kind, options)
    module, _, attr = target.partition(":")
    if not attr:
        raise ConfigError(f"inproc target must be 'stub' or 'module:callable', got {target!r}")
    try:
        factory = getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import inproc backend {target!r}: {exc}") from None
    return factory(kind, options)


class BackendClient:
    """Issues protocol requests for one backend spec, at most ``max_parallel`` at a time."""

    _ids = itertools.count()

    def __init__(self, spec: BackendSpec, transport: Optional[Transport] = None):
        self.spec = spec
        self._slots = threading.BoundedSemaphore(spec.max_parallel)
        if transport is not None:
            self.transport = transport
        elif spec.transport == "inproc":
            self.transport = InprocTransport(_resolve_handler(spec.endpoint_or_cmd, spec.kind, spec.options))
        elif spec.transport == "http":
            self.transport = HttpTransport(spec.endpoint_or_cmd)
        else:
            cmd = spec.endpoint_or_cmd
            if spec.options:
                cmd += " --options " + shlex.quote(json.dumps(spec.options, sort_keys=True))
            self.transport = SubprocessTransport(cmd)

    def call(self, payload: dict, req_id: Optional[str] = None) -> dict:
        """Send one request; returns the response object.

        A timeout becomes ``{"ok": False, "error": "timeout ..."}``; protocol
        violations raise :class:`BackendError`.
        """
        req_id = req_id if req_id is not None else f"req-{next(self._ids)}"
        with self._slots:
            try:
                return self.transport.send(req_id, self.spec.kind, payload, self.spec.timeout_s)
            except TimeoutError as exc:
                return {"id": req_id, "ok": False, "error": f"timeout: {exc}"}

    def close(self) -> None:
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
