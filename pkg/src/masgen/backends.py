"""Chat-completion backends: networked, scripted, and record/replay.

Every backend exposes one method, ``complete(request) -> ChatResponse``, and a
``model_id`` used to stamp requests built by the runtime. Backends are safe to
share across threads; the record store serializes its appends internally.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import requests

ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class AuthError(BackendError):
    pass


class ReplayMiss(BackendError):
    """Strict replay backend saw a request that was never recorded."""


class StoreCorrupt(BackendError):
    def __init__(self, path, line_number: int, reason: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role '{self.role}'")
        if not self.content:
            raise ValueError("message content must be nonempty")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 2048

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request must contain at least one user message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


def cache_key(request: ChatRequest) -> str:
    """Digest identifying a request: model, messages, temperature, seed."""
    payload = json.dumps(
        {
            "model": request.model,
            "messages": [[m.role, m.content] for m in request.messages],
            "temperature": request.temperature,
            "seed": request.seed,
        },
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def user_request(model: str, prompt: str, *, system: str | None = None, temperature: float = 0.0,
                 seed: int | None = None, max_tokens: int = 2048) -> ChatRequest:
    """Convenience constructor for the single-user-turn requests the runtime issues."""
    messages: list[Message] = []
    if system:
        messages.append(Message("system", system))
    messages.append(Message("user", prompt))
    return ChatRequest(model=model, messages=tuple(messages), temperature=temperature, seed=seed,
                       max_tokens=max_tokens)


@runtime_checkable
class LlmBackend(Protocol):
    model_id: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


# ---------------------------------------------------------------------------
# Networked backend (OpenAI-compatible chat completions)
# ---------------------------------------------------------------------------


class OpenAiCompatBackend:
    """Client for any endpoint speaking the chat-completions wire shape.

    Credentials come from the environment (``api_key_env`` / ``base_url_env``)
    so config files never hold secrets. In-flight requests are bounded by a
    semaphore; 429s and transport errors are retried with exponential backoff.
    """

    def __init__(
        self,
        model: str,
        *,
        base_url: str | None = None,
        base_url_env: str = "MASGEN_BASE_URL",
        api_key_env: str = "MASGEN_API_KEY",
        max_in_flight: int = 4,
        retries: int = 2,
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.model_id = model
        self.base_url = (base_url or os.environ.get(base_url_env, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no base URL configured (set ${base_url_env})")
        self.api_key = os.environ.get(api_key_env, "")
        self.retries = retries
        self.timeout_s = timeout_s
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(min(2 ** (attempt - 1), 8.0))
            try:
                with self._gate:
                    resp = self._session.post(
                        f"{self.base_url}/chat/completions", json=body, headers=headers, timeout=self.timeout_s
                    )
            except requests.RequestException as err:
                last_error = TransportError(str(err))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code} from {self.base_url}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RateLimited(f"HTTP {resp.status_code}") if resp.status_code == 429 else TransportError(
                    f"HTTP {resp.status_code}"
                )
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _parse_completion(resp.json())
        assert last_error is not None
        raise last_error


def _parse_completion(payload: dict) -> ChatResponse:
    try:
        choice = payload["choices"][0]
        usage = payload.get("usage") or {}
        return ChatResponse(
            content=choice["message"]["content"] or "",
            finish_reason=choice.get("finish_reason", "stop"),
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )
    except (KeyError, IndexError, TypeError) as err:
        raise TransportError(f"malformed completion payload: {err}") from err


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


class ScriptedBackend:
    """Deterministic fake: serves queued responses or a responder function.

    With a queue, responses come back in FIFO order and exhaustion raises.
    With a responder, the reply is a pure function of the request, which keeps
    concurrent executions deterministic.
    """

    def __init__(
        self,
        queue: Sequence[str] | None = None,
        responder: Callable[[ChatRequest], str] | None = None,
        model: str = "scripted",
    ):
        if (queue is None) == (responder is None):
            raise ValueError("provide exactly one of queue or responder")
        self.model_id = model
        self._responder = responder
        self._queue = list(queue) if queue is not None else None
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            if self._queue is not None:
                if not self._queue:
                    raise TransportError("scripted backend queue exhausted")
                return ChatResponse(content=self._queue.pop(0))
        return ChatResponse(content=self._responder(request))


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------


@dataclass
class _StoreEntry:
    request: dict
    response: dict


class ResponseStore:
    """Append-only JSONL store of (key, request, response) records.

    Appends are serialized; the file can be re-read while being written, which
    is what makes interrupted evaluation sweeps resumable.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, _StoreEntry] = {}
        if self.path.exists():
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    key, request, response = row["key"], row["request"], row["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as err:
                    raise StoreCorrupt(self.path, number, f"bad record: {err}") from err
                self._entries[key] = _StoreEntry(request, response)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> ChatResponse | None:
        entry = self._entries.get(key)
        if entry is None:
            return None
        return ChatResponse(**entry.response)

    def put(self, key: str, request: ChatRequest, response: ChatResponse):
        row = {
            "key": key,
            "request": {
                "model": request.model,
                "messages": [[m.role, m.content] for m in request.messages],
                "temperature": request.temperature,
                "seed": request.seed,
                "max_tokens": request.max_tokens,
            },
            "response": {
                "content": response.content,
                "finish_reason": response.finish_reason,
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
            },
        }
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = _StoreEntry(row["request"], row["response"])
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(row, ensure_ascii=False) + "\n")


class RecordingBackend:
    """Pass-through backend that persists every (request, response) pair."""

    def __init__(self, inner: LlmBackend, store: ResponseStore):
        self.inner = inner
        self.store = store
        self.model_id = inner.model_id

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        cached = self.store.get(key)
        if cached is not None:
            return cached
        response = self.inner.complete(request)
        self.store.put(key, request, response)
        return response


class ReplayBackend:
    """Serves recorded responses; strict mode fails on unseen requests.

    Non-strict replay falls through to ``inner`` and records what it fetched,
    so a store can be grown incrementally.
    """

    def __init__(self, store: ResponseStore, *, strict: bool = True, inner: LlmBackend | None = None,
                 model: str | None = None):
        self.store = store
        self.strict = strict
        self.inner = inner
        self.model_id = model or (inner.model_id if inner else "replay")
        self.misses = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        cached = self.store.get(key)
        if cached is not None:
            return cached
        self.misses += 1
        if self.strict or self.inner is None:
            raise ReplayMiss(f"no recorded response for key {key[:12]}… (model={request.model})")
        response = self.inner.complete(request)
        self.store.put(key, request, response)
        return response


class CountingBackend:
    """Wrapper that counts calls; test and determinism-audit helper."""

    def __init__(self, inner: LlmBackend):
        self.inner = inner
        self.model_id = inner.model_id
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        return self.inner.complete(request)
