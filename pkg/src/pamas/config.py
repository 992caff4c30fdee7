"""Run configuration loaded from YAML or JSON, plus backend construction."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .backends import Backend, RemoteBackend, SimulatedAgentSpec, SimulatedBackend, UsageMeter
from .model import ConfigError, Hyperparameters, Instance

HYPER_FIELDS = {f.name for f in dataclasses.fields(Hyperparameters)}


@dataclass
class BackendConfig:
    kind: str = "simulated"
    seed: int = 0
    tokens_per_call: int = 100
    embedding_dim: int = 64
    default: dict = field(default_factory=lambda: {"base_accuracy": 0.7})
    decision_maker: dict | None = None
    agents: dict[str, dict] = field(default_factory=dict)
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("simulated", "remote"):
            raise ConfigError(f"backend kind must be 'simulated' or 'remote', got {self.kind!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    dataset: Path | None = None
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    backend: BackendConfig = field(default_factory=BackendConfig)
    n_auditors: int = 16
    subset_size: int = 5
    epochs: int = 3
    workers: int = 1
    self_learning_limit: int | None = None
    output_dir: Path = Path("run")
    checkpoint: Path | None = None

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError("ratios must be three positive numbers summing to 1")
        if self.n_auditors < 1 or self.subset_size < 1:
            raise ConfigError("n_auditors and subset_size must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint or self.output_dir / "checkpoint.json"

    def to_dict(self) -> dict:
        hyper = dataclasses.asdict(self.hyper)
        hyper["layer_spec"] = list(hyper["layer_spec"])
        return {
            "dataset": None if self.dataset is None else str(self.dataset),
            "ratios": list(self.ratios),
            "hyper": hyper,
            "backend": self.backend.to_dict(),
            "n_auditors": self.n_auditors,
            "subset_size": self.subset_size,
            "epochs": self.epochs,
            "workers": self.workers,
            "self_learning_limit": self.self_learning_limit,
            "output_dir": str(self.output_dir),
            "checkpoint": None if self.checkpoint is None else str(self.checkpoint),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        data = dict(data)
        base = base_dir or Path.cwd()

        def resolve(value):
            if value is None:
                return None
            p = Path(value).expanduser()
            return p if p.is_absolute() else (base / p).resolve()

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        hyper = dict(data.pop("hyper", None) or {})
        bad = set(hyper) - HYPER_FIELDS
        if bad:
            raise ConfigError(f"unknown hyperparameters: {sorted(bad)}")
        backend = dict(data.pop("backend", None) or {})
        spec_file = backend.pop("spec", None)
        if spec_file is not None:
            backend = {**_read_mapping(resolve(spec_file)), **backend}
        bad = set(backend) - {f.name for f in dataclasses.fields(BackendConfig)}
        if bad:
            raise ConfigError(f"unknown backend keys: {sorted(bad)}")
        try:
            return cls(
                dataset=resolve(data.pop("dataset", None)),
                output_dir=resolve(data.pop("output_dir", "run")),
                checkpoint=resolve(data.pop("checkpoint", None)),
                hyper=Hyperparameters(**hyper),
                backend=BackendConfig(**backend),
                **data,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _read_mapping(path: Path) -> dict:
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML/JSON: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return loaded


def load_config(path: str | Path) -> RunConfig:
    """Read a YAML or JSON run config; relative paths resolve against its folder."""
    path = Path(path).resolve()
    return RunConfig.from_dict(_read_mapping(path), path.parent)


def _spec(raw: Mapping[str, Any] | None, fallback: SimulatedAgentSpec) -> SimulatedAgentSpec:
    if raw is None:
        return fallback
    try:
        return SimulatedAgentSpec(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulated agent spec {dict(raw)}: {exc}") from exc


def build_backends(
    cfg: BackendConfig, meter: UsageMeter, instances: Iterable[Instance] = (), dm_id: str = "DM"
) -> dict[str, Backend]:
    """Instantiate the configured backend under the name ``default``."""
    if cfg.kind == "remote":
        return {"default": RemoteBackend.from_env(meter, timeout=cfg.timeout, embedding_dim=cfg.embedding_dim)}
    default = _spec(cfg.default, SimulatedAgentSpec())
    specs = {k: _spec(v, default) for k, v in cfg.agents.items()}
    if cfg.decision_maker is not None:
        specs[dm_id] = _spec(cfg.decision_maker, default)
    backend = SimulatedBackend(
        meter,
        seed=cfg.seed,
        tokens_per_call=cfg.tokens_per_call,
        embedding_dim=cfg.embedding_dim,
        specs=specs,
        default_spec=default,
    )
    backend.register(instances)
    return {"default": backend}
