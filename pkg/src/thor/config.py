"""YAML engine configuration.

Example::

    datasources:
      - id: logistics
        path: ./logistics.db
        annotations: logistics        # built-in fixture name or a YAML file
        statement_timeout_ms: 10000
    provider:
      kind: live                      # or: scripted
      endpoint: https://llm.example/v1
      model_name: gpt-4o
      api_key: ${THOR_LLM_API_KEY}    # ${VAR} is expanded in api_key only
    policy:
      denied_columns: [users.invitation_token]
    constants:
      accept_threshold: 0.6
    audit:
      path: ./audit.jsonl
    service:
      host: 127.0.0.1
      port: 8080
    fixed_now: 2025-04-17T09:30:00Z   # optional: pin NOW() for reproducible runs

``#`` starts a comment, as usual in YAML.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path

import yaml

from thor.clock import parse_instant, utc
from thor.domain import EngineConstants, MAX_ATTEMPTS, METERS_PER_MILE
from thor.errors import ConfigError
from thor.executor import DatasourceConfig
from thor.guardrail import DEFAULT_DENIED_FUNCTIONS, GuardrailPolicy

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
SECRET_KEYS = {"api_key"}


@dataclass(frozen=True)
class DatasourceEntry:
    datasource_id: str
    config: DatasourceConfig
    annotations: str | None = None
    denied_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "scripted"
    endpoint: str | None = None
    model_name: str | None = None
    scenario_path: str | None = None
    api_key: str | None = None
    timeout_s: float = 30.0
    routing: str = "heuristic"

    def __post_init__(self):
        if self.kind not in ("live", "scripted"):
            raise ConfigError(f"provider.kind must be live or scripted, got {self.kind!r}")
        if self.kind == "scripted" and not self.scenario_path:
            raise ConfigError("scripted provider requires provider.scenario_path")
        if self.kind == "live" and not (self.endpoint and self.model_name):
            raise ConfigError("live provider requires provider.endpoint and provider.model_name")
        if self.routing not in ("heuristic", "llm"):
            raise ConfigError(f"provider.routing must be heuristic or llm, got {self.routing!r}")


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080


@dataclass(frozen=True)
class EngineConfig:
    datasources: tuple[DatasourceEntry, ...]
    provider: ProviderConfig
    policy: GuardrailPolicy = field(default_factory=GuardrailPolicy)
    constants: EngineConstants = field(default_factory=EngineConstants)
    audit_path: str | None = None
    service: ServiceConfig = field(default_factory=ServiceConfig)
    source: str | None = None
    fixed_now: datetime | None = None


def _interpolate(node, key: str | None = None):
    if isinstance(node, dict):
        return {k: _interpolate(v, k) for k, v in node.items()}
    if isinstance(node, list):
        return [_interpolate(v, key) for v in node]
    if isinstance(node, str) and _VAR.search(node):
        if key not in SECRET_KEYS:
            raise ConfigError(f"environment interpolation is only allowed for secrets, not {key!r}")

        def sub(m):
            value = os.environ.get(m.group(1))
            if value is None:
                raise ConfigError(f"environment variable {m.group(1)} is not set")
            return value

        return _VAR.sub(sub, node)
    return node


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a mapping")
    return value


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def _constants(raw: dict) -> EngineConstants:
    known = {f.name for f in fields(EngineConstants)}
    overrides = {}
    for key, value in raw.items():
        k = key.lower()
        if k not in known:
            raise ConfigError(f"unknown constant {key!r}")
        overrides[k] = value
    if overrides.get("max_attempts", MAX_ATTEMPTS) != MAX_ATTEMPTS:
        raise ConfigError("constants may not change MAX_ATTEMPTS")
    if overrides.get("meters_per_mile", METERS_PER_MILE) != METERS_PER_MILE:
        raise ConfigError("constants may not change METERS_PER_MILE")
    return replace(EngineConstants(), **overrides)


def parse_config(doc: dict, base_dir: str | Path = ".", source: str | None = None) -> EngineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    doc = _interpolate(doc)
    base = Path(base_dir)
    constants = _constants(_section(doc, "constants"))

    raw_sources = doc.get("datasources")
    if raw_sources is None and "datasource" in doc:
        raw_sources = [doc["datasource"]]
    if not raw_sources:
        raise ConfigError("at least one datasource is required")
    entries = []
    for raw in raw_sources:
        if not isinstance(raw, dict) or "path" not in raw:
            raise ConfigError("each datasource needs a path")
        ds_id = str(raw.get("id") or Path(raw["path"]).stem)
        cfg = DatasourceConfig(
            _resolve(base, raw["path"]),
            read_only=raw.get("read_only", True),
            statement_timeout_ms=int(raw.get("statement_timeout_ms", 10000)),
            row_limit=int(raw.get("row_limit", constants.row_limit)),
        )
        ann = raw.get("annotations")
        if ann and (ann.endswith((".yaml", ".yml"))):
            ann = _resolve(base, ann)
        entries.append(DatasourceEntry(ds_id, cfg, ann, tuple(raw.get("denied_columns") or ())))
    if len({e.datasource_id for e in entries}) != len(entries):
        raise ConfigError("datasource ids must be unique")

    p = _section(doc, "provider")
    provider = ProviderConfig(
        kind=p.get("kind", "scripted"),
        endpoint=p.get("endpoint"),
        model_name=p.get("model_name"),
        scenario_path=_resolve(base, p.get("scenario_path")),
        api_key=p.get("api_key"),
        timeout_s=float(p.get("timeout_s", 30.0)),
        routing=p.get("routing", "heuristic"),
    )

    pol = _section(doc, "policy")
    policy = GuardrailPolicy(
        allow_ctes=bool(pol.get("allow_ctes", True)),
        allow_set_operations=bool(pol.get("allow_set_operations", True)),
        denied_columns=frozenset(pol.get("denied_columns") or ()),
        denied_functions=DEFAULT_DENIED_FUNCTIONS | frozenset(pol.get("denied_functions") or ()),
        max_statement_length=int(pol.get("max_statement_length", 20000)),
    )
    svc = _section(doc, "service")
    service = ServiceConfig(host=str(svc.get("host", "127.0.0.1")), port=int(svc.get("port", 8080)))
    audit = _section(doc, "audit")
    fixed_now = doc.get("fixed_now")
    if fixed_now is not None:
        try:
            fixed_now = utc(fixed_now) if isinstance(fixed_now, datetime) else parse_instant(str(fixed_now))
        except ValueError as err:
            raise ConfigError(f"fixed_now: {err}") from err
    return EngineConfig(
        datasources=tuple(entries),
        provider=provider,
        policy=policy,
        constants=constants,
        audit_path=_resolve(base, audit.get("path")),
        service=service,
        source=source,
        fixed_now=fixed_now,
    )


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config(doc or {}, path.parent, str(path))


def build_engine(config: EngineConfig, clock=None, provider_factory=None):
    """Open datasources, probe them read-only, introspect, and wire the engine."""
    from thor import fixtures
    from thor.audit import AuditStore
    from thor.clock import FakeClock, SystemClock
    from thor.engine import DatasourceBinding, Engine
    from thor.executor import SqliteExecutor
    from thor.llm import LiveProvider, ScriptedProvider, load_scenario
    from thor.schema import introspect

    if clock is None:
        clock = FakeClock(config.fixed_now) if config.fixed_now else SystemClock()
    bindings = {}
    for entry in config.datasources:
        executor = SqliteExecutor(entry.config, clock)
        executor.probe_readonly()
        ann = {}
        if entry.annotations:
            if entry.annotations in fixtures.FIXTURES:
                ann = fixtures.annotations(entry.annotations)
            else:
                try:
                    ann = yaml.safe_load(Path(entry.annotations).read_text(encoding="utf-8")) or {}
                except (OSError, yaml.YAMLError) as err:
                    raise ConfigError(f"cannot read annotations {entry.annotations}: {err}") from err
        catalog = introspect(executor, entry.datasource_id, ann, entry.denied_columns)
        bindings[entry.datasource_id] = DatasourceBinding(entry.datasource_id, executor, catalog)

    if provider_factory is None:
        pc = config.provider
        if pc.kind == "scripted":
            try:
                scenario = load_scenario(pc.scenario_path)
            except OSError as err:
                raise ConfigError(f"cannot read scenario {pc.scenario_path}: {err}") from err

            def provider_factory(_question):
                return ScriptedProvider(scenario, clock)

        else:
            live = LiveProvider(pc.endpoint, pc.model_name, api_key=pc.api_key, timeout_s=pc.timeout_s, clock=clock)

            def provider_factory(_question):
                return live

    audit = AuditStore(config.audit_path, clock) if config.audit_path else None
    return Engine(
        bindings,
        provider_factory,
        config.policy,
        config.constants,
        audit,
        clock,
        llm_routing=config.provider.routing == "llm",
    )
