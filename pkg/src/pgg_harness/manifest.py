"""Run manifests: one YAML file describing a study run.

String values may reference environment variables as ``${NAME}``; API keys
themselves are read by the gateway from the environment, never from here.

Schema (all keys optional except ``agents``)::

    study: Study1            # Study1 | Study2 | Study3
    agents:                  # 2 entries (Study 1/2) or 1 or 4 (Study 3)
      - {scripted: AlwaysContribute, params: {k: 10}}
      - {provider: openai, model: gpt-4o, display_name: GPT-4o, temperature: 1.0}
    conditions: [NoName, Name]
    pairings: [CC, CS]       # persona orderings; default all
    games: 100               # default 100 (Study 1/2) or 50 (Study 3)
    num_rounds: 20
    endowment: 10
    multiplier: 1.6
    seed: 0
    parallelism: 1
    prompt_variant: corrected   # corrected | printed
    out: runs/example
    gateway:
      mode: mock             # live | mock | replay | record
      fixture: fixtures/session.jsonl   # replay / record
      record_source: mock    # what record mode wraps: live | mock
      base_urls: {openai: "${OPENAI_BASE_URL}"}
      max_in_flight: 4
      retry_budget: 4
      timeout: 60
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Any

import yaml

from .agents import AgentSpec, parse_agent_spec
from .errors import ConfigError
from .game import DEFAULT_ENDOWMENT, DEFAULT_MULTIPLIER, DEFAULT_ROUNDS, Condition, StudyStyle
from .gateway import (
    Gateway,
    MockTransport,
    RecordingTransport,
    ReplayTransport,
    TransportPolicy,
    live_transports,
)
from .prompts import VARIANTS

GATEWAY_MODES = ("live", "mock", "replay", "record")
_VAR_RE = re.compile(r"\$\{(\w+)\}")


def interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"manifest references unset environment variable {name}")
            return os.environ[name]
        return _VAR_RE.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunManifest:
    study: StudyStyle = StudyStyle.STUDY1
    agents: tuple[AgentSpec, ...] = ()
    conditions: tuple[Condition, ...] | None = None
    pairings: tuple[str, ...] | None = None
    games: int | None = None
    num_rounds: int = DEFAULT_ROUNDS
    endowment: int = DEFAULT_ENDOWMENT
    multiplier: Decimal = DEFAULT_MULTIPLIER
    seed: int = 0
    parallelism: int = 1
    prompt_variant: str = "corrected"
    out: Path = Path("runs/latest")
    gateway: str = "mock"
    fixture: Path | None = None
    record_source: str = "mock"
    base_urls: dict[str, str] = field(default_factory=dict, hash=False)
    policy: TransportPolicy = field(default_factory=TransportPolicy)

    def validate(self) -> RunManifest:
        if not self.agents:
            raise ConfigError("manifest lists no agents")
        if self.gateway not in GATEWAY_MODES:
            raise ConfigError(f"gateway must be one of {GATEWAY_MODES}, got {self.gateway!r}")
        if self.gateway in ("replay", "record") and self.fixture is None:
            raise ConfigError(f"{self.gateway} mode requires a fixture path")
        if self.gateway == "replay" and not Path(self.fixture).is_file():  # type: ignore[arg-type]
            raise ConfigError(f"fixture {self.fixture} does not exist")
        if self.record_source not in ("live", "mock"):
            raise ConfigError("record_source must be live or mock")
        if self.prompt_variant not in VARIANTS:
            raise ConfigError(f"prompt_variant must be one of {VARIANTS}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.games is not None and self.games < 1:
            raise ConfigError("games must be >= 1")
        return self

    def with_overrides(self, **kw) -> RunManifest:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _agent_from_yaml(entry: Any) -> AgentSpec:
    if isinstance(entry, str):
        return parse_agent_spec(entry)
    if not isinstance(entry, dict):
        raise ConfigError(f"cannot read agent entry {entry!r}")
    if "scripted" in entry:
        params = {k: int(v) for k, v in (entry.get("params") or {}).items()}
        spec = AgentSpec.scripted(entry["scripted"], **params)
        if entry.get("display_name"):
            spec = replace(spec, display_name=entry["display_name"])
        return spec
    try:
        return AgentSpec.llm(
            entry["provider"],
            entry["model"],
            entry.get("display_name"),
            float(entry.get("temperature", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"agent entry missing {exc}") from None


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"manifest {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("manifest must be a mapping")
    raw = interpolate(raw)
    gw = raw.get("gateway") or {}
    if isinstance(gw, str):
        gw = {"mode": gw}
    policy = TransportPolicy(
        max_in_flight=int(gw.get("max_in_flight", 4)),
        retry_budget=int(gw.get("retry_budget", 4)),
        backoff_base=float(gw.get("backoff_base", 1.0)),
        backoff_multiplier=float(gw.get("backoff_multiplier", 2.0)),
        timeout=float(gw.get("timeout", 60.0)),
    )
    try:
        return RunManifest(
            study=StudyStyle(raw.get("study", "Study1")),
            agents=tuple(_agent_from_yaml(a) for a in raw.get("agents") or ()),
            conditions=tuple(Condition(c) for c in raw["conditions"]) if raw.get("conditions") else None,
            pairings=tuple(str(p) for p in raw["pairings"]) if raw.get("pairings") else None,
            games=int(raw["games"]) if raw.get("games") is not None else None,
            num_rounds=int(raw.get("num_rounds", DEFAULT_ROUNDS)),
            endowment=int(raw.get("endowment", DEFAULT_ENDOWMENT)),
            multiplier=Decimal(str(raw.get("multiplier", DEFAULT_MULTIPLIER))),
            seed=int(raw.get("seed", 0)),
            parallelism=int(raw.get("parallelism", 1)),
            prompt_variant=str(raw.get("prompt_variant", "corrected")),
            out=Path(raw.get("out", "runs/latest")),
            gateway=str(gw.get("mode", "mock")),
            fixture=Path(gw["fixture"]) if gw.get("fixture") else None,
            record_source=str(gw.get("record_source", "mock")),
            base_urls=dict(gw.get("base_urls") or {}),
            policy=policy,
        )
    except ValueError as exc:
        raise ConfigError(f"bad manifest value: {exc}") from exc


def build_gateway(manifest: RunManifest) -> tuple[Gateway, RecordingTransport | None]:
    mode = manifest.gateway
    recorder = None
    if mode == "mock":
        transport: Any = MockTransport()
    elif mode == "live":
        transport = live_transports(manifest.base_urls)
    elif mode == "replay":
        transport = ReplayTransport(manifest.fixture)  # type: ignore[arg-type]
    else:
        inner = MockTransport() if manifest.record_source == "mock" else live_transports(manifest.base_urls)
        recorder = RecordingTransport(inner, manifest.fixture)  # type: ignore[arg-type]
        transport = recorder
    return Gateway(transport, manifest.policy), recorder
