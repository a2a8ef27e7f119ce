"""Run configuration: one JSON file, parsed strictly (unknown keys are errors)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .core import EvolGymError
from .envs import REGISTRY
from .evol.train import TrainConfig
from .policy.remote import EndpointConfig


class ConfigError(EvolGymError, ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    difficulty: int | None = None
    port: int = 0
    url: str | None = None          # connect to a running service instead of in-process sessions
    total: int = 240
    eval: int = 25
    bc: int = 86


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "log_linear"        # log_linear | remote
    base_url: str = ""
    model: str = ""
    timeout: float = 60.0
    max_retries: int = 3


@dataclass(frozen=True)
class RolloutSettings:
    samples: int = 1
    temperature: float = 0.7
    concurrency: int = 1
    seed: int = 0


@dataclass(frozen=True)
class TrainingSettings:
    iterations: int = 4
    learning_rate: float = 0.5
    epochs: int = 3
    merge: str = "with_initial"
    restart_from: str = "base"


@dataclass(frozen=True)
class PathSettings:
    instructions: str = "instructions"
    datasets: str = "datasets"
    run_dir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    environments: Mapping[str, EnvConfig] = field(default_factory=lambda: {n: EnvConfig() for n in REGISTRY})
    policy: PolicyConfig = PolicyConfig()
    rollout: RolloutSettings = RolloutSettings()
    training: TrainingSettings = TrainingSettings()
    paths: PathSettings = PathSettings()
    server: str = "per_env"         # per_env | multi

    def train_config(self) -> TrainConfig:
        t, r = self.training, self.rollout
        return TrainConfig(t.iterations, r.samples, t.merge, t.learning_rate, t.epochs, r.temperature,
                           t.restart_from)

    def difficulties(self) -> dict[str, int]:
        return {n: (e.difficulty if e.difficulty is not None else REGISTRY[n].default_difficulty)
                for n, e in self.environments.items()}

    def endpoint(self) -> EndpointConfig:
        p = self.policy
        return EndpointConfig(p.base_url, p.model, p.timeout, p.max_retries)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["environments"] = {k: asdict(v) for k, v in self.environments.items()}
        return d


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = known[key]
        kwargs[key] = _coerce(f.type, value, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SCALARS = {"int": int, "float": (int, float), "str": str}


def _coerce(type_name: str, value: Any, where: str):
    base = type_name.replace(" | None", "")
    if value is None and "None" in type_name:
        return None
    if base in _SCALARS:
        ok = isinstance(value, _SCALARS[base]) and not isinstance(value, bool)
        if not ok:
            raise ConfigError(f"{where}: expected {base}, got {type(value).__name__}")
        return float(value) if base == "float" else value
    raise ConfigError(f"{where}: unsupported field type {type_name}")


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    sections = {"policy": PolicyConfig, "rollout": RolloutSettings, "training": TrainingSettings,
                "paths": PathSettings}
    unknown = sorted(set(data) - set(sections) - {"environments", "server"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, cls in sections.items():
        if key in data:
            kwargs[key] = _build(cls, data[key], key)
    if "environments" in data:
        envs = data["environments"]
        if not isinstance(envs, dict) or not envs:
            raise ConfigError("environments: expected a non-empty object")
        parsed = {}
        for name, spec in envs.items():
            if name not in REGISTRY:
                raise ConfigError(f"environments: unknown environment {name!r}")
            parsed[name] = _build(EnvConfig, spec, f"environments.{name}")
        kwargs["environments"] = parsed
    if "server" in data:
        if data["server"] not in ("per_env", "multi"):
            raise ConfigError("server: expected 'per_env' or 'multi'")
        kwargs["server"] = data["server"]
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.policy.kind not in ("log_linear", "remote"):
        raise ConfigError(f"policy.kind: expected log_linear or remote, got {cfg.policy.kind!r}")
    if cfg.policy.kind == "remote" and not (cfg.policy.base_url and cfg.policy.model):
        raise ConfigError("policy: remote policy needs base_url and model")
    for name, e in cfg.environments.items():
        if e.total < 1 or e.eval < 0 or e.bc < 0 or e.eval + e.bc > e.total:
            raise ConfigError(f"environments.{name}: unsatisfiable counts total={e.total} eval={e.eval} bc={e.bc}")
        if not 0 <= e.port < 65536:
            raise ConfigError(f"environments.{name}.port: out of range")
        try:
            REGISTRY[name].check_difficulty(cfg.difficulties()[name])
        except ValueError as exc:
            raise ConfigError(f"environments.{name}.difficulty: {exc}") from None
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None
    if cfg.rollout.concurrency < 1:
        raise ConfigError("rollout.concurrency must be >= 1")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(data)
