"""YAML configuration: named backends, pool, limits, sandbox, caching.

Example:

    backends:
      executor: {kind: demo}
      judge: {kind: demo}
      generator: {kind: demo}
      refiner: {kind: demo}
      # executor: {kind: openai, model: llama-3-70b-instruct,
      #            base_url_env: MASGEN_BASE_URL, api_key_env: MASGEN_API_KEY,
      #            max_in_flight: 4, retries: 2}
    pool_manifest: null
    cache_dir: .masgen_cache
    parallelism: 2
    record_store: null        # path; set to record/replay every model call
    strict_replay: false      # true = fail on any request not in the store
    limits: {max_calls: 32, per_call_timeout_s: 120, total_timeout_s: 900}
    runtime: {fanout_workers: 1, branch_temperature: 0.7, default_temperature: 0.0}
    sandbox:
      command: [node, sandbox-worker/dist/worker.js]
      pool_size: 1
      timeout_s: 20

Credentials never live in the file; backends read them from the environment
variables the config names.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends import LlmBackend, OpenAiCompatBackend, RecordingBackend, ReplayBackend, ResponseStore
from .demo import demo_backend
from .pool import MasPool, builtin_pool, load_manifest
from .runtime import Limits, RuntimeOptions
from .sandbox import CodeSandbox, SandboxPool, ScriptedSandbox


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "demo"  # demo | openai
    model: str = "demo"
    base_url: str | None = None
    base_url_env: str = "MASGEN_BASE_URL"
    api_key_env: str = "MASGEN_API_KEY"
    max_in_flight: int = 4
    retries: int = 2
    timeout_s: float = 120.0


@dataclass(frozen=True)
class SandboxConfig:
    command: tuple[str, ...] = ()
    pool_size: int = 1
    timeout_s: float = 20.0
    memory_mb: int = 512


@dataclass
class Config:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    pool_manifest: str | None = None
    cache_dir: str = ".masgen_cache"
    parallelism: int = 1
    record_store: str | None = None
    strict_replay: bool = False
    limits: Limits = field(default_factory=Limits)
    runtime: RuntimeOptions = field(default_factory=RuntimeOptions)
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    export_seed: int = 20240501

    _store: ResponseStore | None = field(default=None, repr=False, compare=False)

    def backend(self, name: str) -> LlmBackend:
        """Build the named backend, wrapped for record/replay when configured."""
        if name not in self.backends:
            raise ConfigError(f"no backend named '{name}' in config (have: {sorted(self.backends)})")
        spec = self.backends[name]
        if spec.kind == "demo":
            inner: LlmBackend = demo_backend(model=spec.model)
        elif spec.kind == "openai":
            inner = OpenAiCompatBackend(
                spec.model,
                base_url=spec.base_url,
                base_url_env=spec.base_url_env,
                api_key_env=spec.api_key_env,
                max_in_flight=spec.max_in_flight,
                retries=spec.retries,
                timeout_s=spec.timeout_s,
            )
        else:
            raise ConfigError(f"unknown backend kind '{spec.kind}'")

        if self.record_store:
            if self._store is None:
                self._store = ResponseStore(self.record_store)
            if self.strict_replay:
                return ReplayBackend(self._store, strict=True, model=spec.model)
            return RecordingBackend(inner, self._store)
        return inner

    def load_pool(self) -> MasPool:
        if self.pool_manifest:
            return load_manifest(self.pool_manifest)
        return builtin_pool()

    def make_sandbox(self) -> CodeSandbox:
        """Worker-backed when a command is configured, scripted otherwise."""
        if self.sandbox.command:
            return SandboxPool(
                list(self.sandbox.command),
                size=self.sandbox.pool_size,
                default_memory_mb=self.sandbox.memory_mb,
            )
        return ScriptedSandbox()


def load_config(path=None) -> Config:
    """Load a config file (all fields optional) into a validated Config."""
    raw: dict = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path, encoding="utf-8") as handle:
            raw = yaml.safe_load(handle) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: top level must be a mapping")

    try:
        backends = {
            name: _dataclass_from(BackendConfig, spec or {})
            for name, spec in (raw.get("backends") or {}).items()
        }
        config = Config(
            backends=backends,
            pool_manifest=raw.get("pool_manifest"),
            cache_dir=raw.get("cache_dir", ".masgen_cache"),
            parallelism=int(raw.get("parallelism", 1)),
            record_store=raw.get("record_store"),
            strict_replay=bool(raw.get("strict_replay", False)),
            limits=_dataclass_from(Limits, raw.get("limits") or {}),
            runtime=_dataclass_from(RuntimeOptions, raw.get("runtime") or {}),
            sandbox=_sandbox_from(raw.get("sandbox") or {}),
            export_seed=int(raw.get("export_seed", 20240501)),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad config: {err}") from err

    if config.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if config.pool_manifest and not Path(config.pool_manifest).exists():
        raise ConfigError(f"pool manifest not found: {config.pool_manifest}")
    for name in ("executor", "judge", "generator", "refiner"):
        config.backends.setdefault(name, BackendConfig())
    return config


def _dataclass_from(cls, raw: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**raw)


def _sandbox_from(raw: dict) -> SandboxConfig:
    raw = dict(raw)
    if "command" in raw:
        raw["command"] = tuple(str(part) for part in raw["command"])
    return _dataclass_from(SandboxConfig, raw)
