"""Execute a MASL program against a backend, producing an answer + transcript.

Execution walks the step list in order. Fan-out branches are independent and
may run on a thread pool, but their results and transcript events are always
merged in branch order, so a deterministic backend yields a deterministic
transcript digest regardless of scheduling. Budgets are enforced by reserving
a call slot before each backend call, which bounds the event count even under
concurrent branches.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .backends import LlmBackend, RateLimited, ReplayMiss, TransportError, user_request
from .dsl import (
    BRANCH_VAR,
    BlockNotFound,
    ExecCode,
    ExtractBlock,
    FanOut,
    LlmCall,
    Loop,
    MasProgram,
    PromptTemplate,
    Render,
    Return,
    extract_block,
)
from .sandbox import CodeSandbox, SandboxStatus


class ExecutionStatus(Enum):
    OK = "ok"
    RUNTIME_FAILURE = "runtime_failure"
    BUDGET_EXCEEDED = "budget_exceeded"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Limits:
    """Execution budgets. Defaults allow twice the largest built-in program."""

    max_calls: int = 32
    per_call_timeout_s: float = 120.0
    total_timeout_s: float = 900.0
    max_response_chars: int = 200_000

    def __post_init__(self):
        if min(self.max_calls, self.per_call_timeout_s, self.total_timeout_s, self.max_response_chars) <= 0:
            raise ValueError("all limits must be positive")


@dataclass(frozen=True)
class CallEvent:
    role_tag: str
    rendered_prompt: str
    response: str
    model: str
    latency_ms: int


@dataclass
class Transcript:
    events: list[CallEvent] = field(default_factory=list)
    started: float = 0.0
    ended: float = 0.0

    @property
    def digest(self) -> str:
        """Deterministic hash over (prompt, response) pairs in order."""
        h = hashlib.sha256()
        for event in self.events:
            h.update(json.dumps([event.rendered_prompt, event.response], ensure_ascii=False).encode("utf-8"))
        return h.hexdigest()

    def export_lines(self) -> list[str]:
        """One JSON record per event: index, role_tag, prompt, response, model, latency_ms."""
        return [
            json.dumps(
                {
                    "index": i,
                    "role_tag": e.role_tag,
                    "prompt": e.rendered_prompt,
                    "response": e.response,
                    "model": e.model,
                    "latency_ms": e.latency_ms,
                },
                ensure_ascii=False,
            )
            for i, e in enumerate(self.events)
        ]


@dataclass
class ExecutionResult:
    answer: str
    status: ExecutionStatus
    transcript: Transcript
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is ExecutionStatus.OK


@dataclass(frozen=True)
class RuntimeOptions:
    """Per-execution knobs the language itself does not fix.

    Calls inside a fan-out default to a sampling temperature that encourages
    diversity; aggregators, judges, and other straight-line calls default to
    greedy decoding. A ``temp=`` attribute on a call step overrides both.
    """

    branch_temperature: float = 0.7
    default_temperature: float = 0.0
    max_tokens: int = 2048
    seed: int | None = None
    call_retries: int = 2
    retry_backoff_s: float = 0.5
    fanout_workers: int = 1


class _Abort(Exception):
    def __init__(self, status: ExecutionStatus, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(detail)


class Executor:
    """Shareable executor; all per-execution state lives in a private frame."""

    def __init__(self, backend: LlmBackend, sandbox: CodeSandbox | None = None,
                 limits: Limits | None = None, options: RuntimeOptions | None = None):
        self.backend = backend
        self.sandbox = sandbox
        self.limits = limits or Limits()
        self.options = options or RuntimeOptions()

    def run(self, program: MasProgram, query: str) -> ExecutionResult:
        transcript = Transcript(started=time.time())
        frame = _Frame(self, transcript)
        env: dict = {"query": query}
        try:
            answer = frame.run_block(program, program.steps, env, transcript.events, in_fanout=False)
        except _Abort as abort:
            transcript.ended = time.time()
            return ExecutionResult("", abort.status, transcript, failure=abort.detail)
        except Exception as err:  # defensive: a broken backend or sandbox must not escape
            transcript.ended = time.time()
            return ExecutionResult("", ExecutionStatus.RUNTIME_FAILURE, transcript,
                                   failure=f"{type(err).__name__}: {err}")
        transcript.ended = time.time()
        if time.monotonic() > frame.deadline:
            return ExecutionResult("", ExecutionStatus.TIMEOUT, transcript,
                                   failure=f"total time budget of {self.limits.total_timeout_s}s exhausted")
        if not answer:
            return ExecutionResult("", ExecutionStatus.RUNTIME_FAILURE, transcript, failure="empty final answer")
        return ExecutionResult(answer, ExecutionStatus.OK, transcript)


def execute(program: MasProgram, query: str, backend: LlmBackend, *,
            sandbox: CodeSandbox | None = None, limits: Limits | None = None,
            options: RuntimeOptions | None = None) -> ExecutionResult:
    """One-shot convenience wrapper around Executor.run."""
    return Executor(backend, sandbox=sandbox, limits=limits, options=options).run(program, query)


class _Frame:
    """State for one execution: budget counter, deadline, event merging."""

    def __init__(self, executor: Executor, transcript: Transcript):
        self.executor = executor
        self.transcript = transcript
        self.deadline = time.monotonic() + executor.limits.total_timeout_s
        self._budget = executor.limits.max_calls
        self._lock = threading.Lock()

    def run_block(self, program, steps, env, events, in_fanout) -> str:
        value = ""
        for step in steps:
            value = self.run_step(program, step, env, events, in_fanout)
        return value

    def run_step(self, program, step, env, events, in_fanout) -> str:
        if isinstance(step, LlmCall):
            env[step.out] = self._call(program, step, env, events, in_fanout)
            return env[step.out]
        if isinstance(step, Render):
            env[step.out] = _render(program.prompts[step.template], step.bindings, env)
            return env[step.out]
        if isinstance(step, ExtractBlock):
            try:
                env[step.out] = extract_block(env[step.source], [step.marker])
            except BlockNotFound as err:
                raise _Abort(ExecutionStatus.RUNTIME_FAILURE,
                             f"no {step.marker.value} block in variable '{step.source}': {err}") from err
            return env[step.out]
        if isinstance(step, ExecCode):
            env[step.out] = self._exec_code(step, env)
            return env[step.out]
        if isinstance(step, FanOut):
            env[step.out] = self._fan_out(program, step, env, events)
            return ""
        if isinstance(step, Loop):
            for _ in range(step.rounds):
                iter_env = dict(env)
                for sub in step.body:
                    self.run_step(program, sub, iter_env, events, in_fanout)
                env[step.carry] = iter_env[step.carry]
            return env[step.carry]
        assert isinstance(step, Return)
        return env[step.var]

    def _call(self, program, step: LlmCall, env, events, in_fanout) -> str:
        prompt = _render(program.prompts[step.template], step.bindings, env)
        options = self.executor.options
        if step.temperature is not None:
            temperature = step.temperature
        else:
            temperature = options.branch_temperature if in_fanout else options.default_temperature
        request = user_request(self.executor.backend.model_id, prompt, temperature=temperature,
                               seed=options.seed, max_tokens=options.max_tokens)

        self._reserve_call()
        started = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(options.call_retries + 1):
            if attempt:
                time.sleep(options.retry_backoff_s * (2 ** (attempt - 1)))
            try:
                response = self.executor.backend.complete(request)
                break
            except (TransportError, RateLimited) as err:
                last_error = err
            except ReplayMiss as err:
                raise _Abort(ExecutionStatus.RUNTIME_FAILURE, f"backend error: {err}") from err
        else:
            raise _Abort(ExecutionStatus.RUNTIME_FAILURE,
                         f"backend error after {options.call_retries} retries: {last_error}") from last_error

        content = response.content[: self.executor.limits.max_response_chars]
        events.append(CallEvent(
            role_tag=step.role_tag,
            rendered_prompt=prompt,
            response=content,
            model=request.model,
            latency_ms=int((time.monotonic() - started) * 1000),
        ))
        return content

    def _reserve_call(self):
        with self._lock:
            if self._budget <= 0:
                raise _Abort(ExecutionStatus.BUDGET_EXCEEDED,
                             f"call budget of {self.executor.limits.max_calls} exhausted")
            if time.monotonic() > self.deadline:
                raise _Abort(ExecutionStatus.TIMEOUT,
                             f"total time budget of {self.executor.limits.total_timeout_s}s exhausted")
            self._budget -= 1

    def _exec_code(self, step: ExecCode, env) -> str:
        sandbox = self.executor.sandbox
        if sandbox is None:
            raise _Abort(ExecutionStatus.RUNTIME_FAILURE, "program executes code but no sandbox is configured")
        result = sandbox.run_snippet(env[step.code], timeout_s=step.timeout_s)
        if result.status is SandboxStatus.TIMEOUT:
            return "code execution timed out"
        # Error text flows to the next agent on purpose: repair-style programs
        # read the failure and fix the code.
        return result.output

    def _fan_out(self, program, step: FanOut, env, parent_events) -> list[str]:
        def run_branch(index: int) -> tuple[str, list[CallEvent]]:
            branch_env = dict(env)
            branch_env[BRANCH_VAR] = str(index + 1)
            branch_events: list[CallEvent] = []
            value = self.run_block(program, step.body, branch_env, branch_events, in_fanout=True)
            return value, branch_events

        workers = self.executor.options.fanout_workers
        if workers > 1 and step.count > 1:
            abort: _Abort | None = None
            outcomes: list[tuple[str, list[CallEvent]]] = []
            with ThreadPoolExecutor(max_workers=min(workers, step.count)) as pool:
                futures = [pool.submit(run_branch, i) for i in range(step.count)]
                for future in futures:
                    try:
                        outcomes.append(future.result())
                    except _Abort as err:
                        abort = abort or err
            for _, branch_events in outcomes:
                parent_events.extend(branch_events)
            if abort is not None:
                raise abort
        else:
            outcomes = [run_branch(i) for i in range(step.count)]
            for _, branch_events in outcomes:
                parent_events.extend(branch_events)
        return [value for value, _ in outcomes]


def _render(template: PromptTemplate, bindings: dict[str, str], env: dict) -> str:
    resolved = {placeholder: env[var] for placeholder, var in bindings.items()}
    return template.render(resolved)


def render_template(template: PromptTemplate, bindings: dict) -> str:
    """Render a template against direct value bindings (no variable lookup)."""
    return template.render(bindings)


def count_calls(program: MasProgram) -> int:
    """Static model-call count: fan-outs and loops multiply their bodies."""
    return _count(program.steps)


def _count(steps) -> int:
    total = 0
    for step in steps:
        if isinstance(step, LlmCall):
            total += 1
        elif isinstance(step, FanOut):
            total += step.count * _count(step.body)
        elif isinstance(step, Loop):
            total += step.rounds * _count(step.body)
    return total
