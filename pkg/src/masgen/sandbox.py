"""Interface to the code-execution sandbox, plus the worker line protocol.

The sandbox itself is a separate worker process (see sandbox-worker/ at the
repository root) that runs untrusted code in fresh, resource-limited
subprocesses. The primary package only speaks the worker's stdin/stdout
protocol; tests run against ScriptedSandbox so nothing here requires the
worker to be built.

Wire protocol (documented byte-exact in docs/sandbox_protocol.md): each frame
is one line of UTF-8: the decimal byte length of the JSON payload, one space,
the payload itself (JSON, no raw newlines), then "\\n". One request frame in,
one response frame out, strictly alternating.
"""

from __future__ import annotations

import json
import subprocess
import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, runtime_checkable


class SandboxStatus(Enum):
    OK = "OK"
    ERROR = "ERROR"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class CaseResult:
    passed: bool
    message: str = ""


@dataclass(frozen=True)
class SandboxResult:
    status: SandboxStatus
    output: str
    per_test: tuple[CaseResult, ...] | None = None

    @property
    def pass_rate(self) -> float:
        if not self.per_test:
            return 0.0
        return sum(1 for t in self.per_test if t.passed) / len(self.per_test)


class SandboxFailure(Exception):
    """The sandbox infrastructure itself failed (not the code under test)."""


@runtime_checkable
class CodeSandbox(Protocol):
    def run_snippet(self, code: str, timeout_s: float) -> SandboxResult: ...

    def run_tests(self, code: str, tests: Sequence[str], entry_point: str, timeout_s: float) -> SandboxResult: ...


# ---------------------------------------------------------------------------
# Scripted sandbox (tests and dry runs)
# ---------------------------------------------------------------------------


class ScriptedSandbox:
    """Deterministic stand-in driven by caller-supplied functions.

    The defaults echo something plausible: snippets "produce" a fixed output
    and all tests pass. Tests override the hooks to script failures.
    """

    def __init__(
        self,
        snippet_hook: Callable[[str], SandboxResult] | None = None,
        tests_hook: Callable[[str, Sequence[str]], SandboxResult] | None = None,
    ):
        self._snippet_hook = snippet_hook
        self._tests_hook = tests_hook
        self.snippet_calls = 0
        self.tests_calls = 0

    def run_snippet(self, code: str, timeout_s: float) -> SandboxResult:
        self.snippet_calls += 1
        if self._snippet_hook:
            return self._snippet_hook(code)
        return SandboxResult(SandboxStatus.OK, "output = (scripted)")

    def run_tests(self, code: str, tests: Sequence[str], entry_point: str, timeout_s: float) -> SandboxResult:
        self.tests_calls += 1
        if self._tests_hook:
            return self._tests_hook(code, tests)
        return SandboxResult(SandboxStatus.OK, "", tuple(CaseResult(True) for _ in tests))


# ---------------------------------------------------------------------------
# Worker-backed sandbox
# ---------------------------------------------------------------------------


def encode_frame(payload: dict) -> bytes:
    body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    return str(len(body)).encode("ascii") + b" " + body + b"\n"


def decode_frame(line: bytes) -> dict:
    try:
        length_text, _, body = line.rstrip(b"\n").partition(b" ")
        length = int(length_text)
    except ValueError as err:
        raise SandboxFailure(f"malformed frame header: {line[:40]!r}") from err
    if length != len(body):
        raise SandboxFailure(f"frame length mismatch: header says {length}, payload is {len(body)} bytes")
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SandboxFailure(f"frame payload is not valid JSON: {err}") from err


class WorkerSandbox:
    """Client for one sandbox worker process.

    The worker handles one request at a time, so calls are serialized with a
    lock; use a SandboxPool for parallel evaluation cells. A dead or
    misbehaving worker is restarted on the next request.
    """

    def __init__(self, command: Sequence[str], *, default_memory_mb: int = 512, spawn_timeout_s: float = 30.0):
        self.command = list(command)
        self.default_memory_mb = default_memory_mb
        self.spawn_timeout_s = spawn_timeout_s
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def run_snippet(self, code: str, timeout_s: float) -> SandboxResult:
        return self._request({
            "mode": "RUN_SNIPPET",
            "code": code,
            "timeout_s": timeout_s,
            "memory_mb": self.default_memory_mb,
        })

    def run_tests(self, code: str, tests: Sequence[str], entry_point: str, timeout_s: float) -> SandboxResult:
        return self._request({
            "mode": "RUN_TESTS",
            "code": code,
            "tests": list(tests),
            "entry_point": entry_point,
            "timeout_s": timeout_s,
            "memory_mb": self.default_memory_mb,
        })

    def close(self):
        with self._lock:
            if self._proc is not None:
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
                )
            except OSError as err:
                raise SandboxFailure(f"cannot start sandbox worker {self.command!r}: {err}") from err
        return self._proc

    def _request(self, payload: dict) -> SandboxResult:
        with self._lock:
            proc = self._ensure_proc()
            try:
                proc.stdin.write(encode_frame(payload))
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as err:
                self._proc = None
                raise SandboxFailure(f"sandbox worker died: {err}") from err
            if not line:
                self._proc = None
                raise SandboxFailure("sandbox worker closed its output stream")
            reply = decode_frame(line)
        return _parse_response(reply)


def _parse_response(reply: dict) -> SandboxResult:
    try:
        status = SandboxStatus(reply["status"])
        output = reply.get("output", "")
        per_test_raw = reply.get("per_test")
    except (KeyError, ValueError) as err:
        raise SandboxFailure(f"malformed sandbox response: {err}") from err
    per_test = None
    if per_test_raw is not None:
        per_test = tuple(CaseResult(bool(t.get("pass")), str(t.get("message", ""))) for t in per_test_raw)
    return SandboxResult(status, output, per_test)


class SandboxPool:
    """Fixed pool of workers checked out per evaluation cell."""

    def __init__(self, command: Sequence[str], size: int = 1, **kwargs):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._workers = [WorkerSandbox(command, **kwargs) for _ in range(size)]
        self._free = list(self._workers)
        self._cv = threading.Condition()

    def acquire(self) -> WorkerSandbox:
        with self._cv:
            while not self._free:
                self._cv.wait()
            return self._free.pop()

    def release(self, worker: WorkerSandbox):
        with self._cv:
            self._free.append(worker)
            self._cv.notify()

    def run_snippet(self, code: str, timeout_s: float) -> SandboxResult:
        worker = self.acquire()
        try:
            return worker.run_snippet(code, timeout_s)
        finally:
            self.release(worker)

    def run_tests(self, code: str, tests: Sequence[str], entry_point: str, timeout_s: float) -> SandboxResult:
        worker = self.acquire()
        try:
            return worker.run_tests(code, tests, entry_point, timeout_s)
        finally:
            self.release(worker)

    def close(self):
        for worker in self._workers:
            worker.close()
