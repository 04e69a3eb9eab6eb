"""Engine configuration: one JSON document wiring snapshot, registry, backend.

Schema (all keys optional unless noted):

    {
      "data_dir": "./data",                      // session logs + snapshots
      "listen": {"host": "127.0.0.1", "port": 8710},
      "snapshot": "./known_compounds.csv",       // formula,source_id lines
      "registry": {"mode": "mock", "formulas": ["LiCoO2"]}
                | {"mode": "live", "base_url": "https://...", "api_key_env": "REGISTRY_API_KEY"},
      "backend":  {"mode": "scripted", "transcript": "./transcript.jsonl"}
                | {"mode": "live", "base_url": "https://...", "api_key_env": "LLM_API_KEY"},
      "session_defaults": { ... SessionConfig fields ... },
      "valences": {"Nb": 5},                     // extends the built-in table
      "distance_weights": [3, 7, 5, 10, 5, 1, 10],
      "distance_groups": [["Li"], ["Mn","Co","Ni"], [...], [...], [...]],
      "clock": "logical"                         // or "wall"
    }

Scripted and live backends are mutually exclusive per session; API keys are
read from the named environment variables, never from this file.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

from .gateway import LiveBackend, LLMBackend, ScriptedBackend, load_transcript
from .metrics import GroupWeights, ValenceTable
from .pipeline import SessionConfig
from .store import LiveRegistryClient, MockRegistryClient, RegistryClient, Snapshot, load_snapshot

__all__ = ["ConfigInvalid", "EngineConfig", "load_engine_config"]


class ConfigInvalid(ValueError):
    pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigInvalid(message)


@dataclass
class EngineConfig:
    data_dir: str = "./data"
    host: str = "127.0.0.1"
    port: int = 8710
    snapshot_path: str | None = None
    registry: dict = field(default_factory=lambda: {"mode": "mock", "formulas": []})
    backend: dict | None = None
    session_defaults: SessionConfig = field(default_factory=SessionConfig)
    valences: dict[str, int] = field(default_factory=dict)
    distance_weights: list[float] | None = None
    distance_groups: list[list[str]] | None = None
    clock: str = "logical"

    def __post_init__(self):
        _require(self.clock in ("logical", "wall"), "clock must be 'logical' or 'wall'")
        _require(self.registry.get("mode") in ("mock", "live"), "registry.mode must be mock or live")
        if self.backend is not None:
            mode = self.backend.get("mode")
            _require(mode in ("scripted", "live"), "backend.mode must be scripted or live")
            if mode == "scripted":
                _require(bool(self.backend.get("transcript")), "scripted backend needs a transcript path")
            else:
                _require(bool(self.backend.get("base_url")), "live backend needs a base_url")
        if self.distance_weights is not None:
            _require(len(self.distance_weights) == 7, "distance_weights must have 7 entries")
        if self.distance_groups is not None:
            _require(len(self.distance_groups) == 5, "distance_groups must have 5 element lists")

    # -- factories -----------------------------------------------------------

    def build_snapshot(self) -> Snapshot:
        if self.snapshot_path:
            return load_snapshot(self.snapshot_path)
        return Snapshot(records=())

    def build_registry(self) -> RegistryClient:
        if self.registry["mode"] == "mock":
            return MockRegistryClient.of(self.registry.get("formulas", []))
        return LiveRegistryClient(
            base_url=self.registry["base_url"],
            api_key_env=self.registry.get("api_key_env", "REGISTRY_API_KEY"),
        )

    def build_backend(self, override: dict | None = None) -> LLMBackend:
        """A fresh backend per session (a scripted transcript has its own cursor)."""
        spec = override if override is not None else self.backend
        if spec is None:
            raise ConfigInvalid("no LLM backend configured")
        if spec.get("mode") == "scripted":
            return ScriptedBackend(load_transcript(spec["transcript"]))
        if spec.get("mode") == "live":
            return LiveBackend(
                base_url=spec["base_url"],
                api_key_env=spec.get("api_key_env", "LLM_API_KEY"),
            )
        raise ConfigInvalid(f"unsupported backend spec: {spec!r}")

    def valence_table(self) -> ValenceTable:
        table = ValenceTable.default()
        if self.valences:
            table = table.extended(self.valences)
        return table

    def group_weights(self) -> GroupWeights:
        if self.distance_weights is None and self.distance_groups is None:
            return GroupWeights.default()
        default = GroupWeights.default()
        weights = tuple(float(w) for w in (self.distance_weights or default.weights))
        groups = tuple(
            frozenset(g) for g in (self.distance_groups or default.groups)
        )
        return GroupWeights(weights=weights, groups=groups)

    def clock_fn(self) -> Callable[[int], float]:
        if self.clock == "wall":
            return lambda _seq: time.time()
        return lambda seq: float(seq)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        _require(isinstance(data, dict), "config root must be a JSON object")
        listen = data.get("listen", {})
        try:
            session_defaults = SessionConfig.from_dict(data.get("session_defaults", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"invalid session_defaults: {exc}") from exc
        return cls(
            data_dir=data.get("data_dir", "./data"),
            host=listen.get("host", "127.0.0.1"),
            port=int(listen.get("port", 8710)),
            snapshot_path=data.get("snapshot"),
            registry=data.get("registry", {"mode": "mock", "formulas": []}),
            backend=data.get("backend"),
            session_defaults=session_defaults,
            valences=data.get("valences", {}),
            distance_weights=data.get("distance_weights"),
            distance_groups=data.get("distance_groups"),
            clock=data.get("clock", "logical"),
        )


def load_engine_config(path: str) -> EngineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path!r} is not valid JSON: {exc}") from exc
    return EngineConfig.from_dict(data)
