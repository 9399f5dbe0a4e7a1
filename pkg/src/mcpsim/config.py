"""Run configuration: one strict JSON document with a version tag.

Unknown keys are rejected at every nesting level so a typo in an
experiment file fails loudly instead of silently using a default.  The
top-level ``seed`` drives every random stream; the workload block
deliberately has no seed of its own.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .controller import ROUTING_MODES, RewardParams, Td3Config
from .engine import EngineParams
from .modules import MODULE_KINDS, ModuleDescriptor, default_descriptors
from .tasks import WorkloadSpec
from .training import TrainParams

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Raised on malformed or internally inconsistent run configs."""


@dataclass(frozen=True)
class WorkloadParams:
    """Workload shape without a seed; the run seed is injected on demand."""

    n_tasks: int = 2000
    duplicate_fraction: float = 0.2
    complexity_mix: tuple[float, float, float] = (0.4, 0.4, 0.2)
    vocab_size: int = 256
    max_len: int = 64

    def __post_init__(self) -> None:
        self.to_spec(seed=0)  # reuse the spec's range validation

    def to_spec(self, seed: int) -> WorkloadSpec:
        return WorkloadSpec(
            seed=seed,
            n_tasks=self.n_tasks,
            duplicate_fraction=self.duplicate_fraction,
            complexity_mix=self.complexity_mix,
            vocab_size=self.vocab_size,
            max_len=self.max_len,
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs, serializable both ways."""

    version: int = CONFIG_VERSION
    seed: int = 7
    mode: str = "dynamic"
    out_dir: str = "runs/out"
    episodes: int = 1
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    engine: EngineParams = field(default_factory=EngineParams)
    reward: RewardParams = field(default_factory=RewardParams)
    td3: Td3Config = field(default_factory=Td3Config)
    train: TrainParams = field(default_factory=TrainParams)
    descriptors: dict[str, ModuleDescriptor] = field(
        default_factory=default_descriptors
    )

    def __post_init__(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.mode not in ROUTING_MODES:
            raise ConfigError(f"unknown routing mode {self.mode!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if set(self.descriptors) != set(MODULE_KINDS):
            raise ConfigError("descriptors must cover exactly the three modules")

    def workload_spec(self, episode: int = 0) -> WorkloadSpec:
        """The seeded workload of one episode (episode 0 is the base seed)."""
        return self.workload.to_spec(self.seed + 7919 * episode)


_TUPLE_FIELDS = {"complexity_mix", "module_weights", "hidden", "activation"}


def _build_dataclass(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a json object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = tuple(value) if key in _TUPLE_FIELDS else value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a json object")
    if "version" not in data:
        raise ConfigError("config is missing the version field")
    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    kwargs: dict = {}
    for key in ("version", "seed", "mode", "out_dir", "episodes"):
        if key in data:
            kwargs[key] = data[key]
    if "workload" in data:
        kwargs["workload"] = _build_dataclass(WorkloadParams, data["workload"], "workload")
    if "engine" in data:
        kwargs["engine"] = _build_dataclass(EngineParams, data["engine"], "engine")
    if "reward" in data:
        kwargs["reward"] = _build_dataclass(RewardParams, data["reward"], "reward")
    if "td3" in data:
        kwargs["td3"] = _build_dataclass(Td3Config, data["td3"], "td3")
    if "train" in data:
        kwargs["train"] = _build_dataclass(TrainParams, data["train"], "train")
    if "descriptors" in data:
        descs = data["descriptors"]
        if not isinstance(descs, dict) or set(descs) - set(MODULE_KINDS):
            raise ConfigError("descriptors must map module kinds to profiles")
        merged = dict(default_descriptors())
        for kind, profile in descs.items():
            if not isinstance(profile, dict):
                raise ConfigError(f"descriptors.{kind} must be a json object")
            merged[kind] = _build_dataclass(
                ModuleDescriptor, dict(profile, kind=kind), f"descriptors.{kind}"
            )
        kwargs["descriptors"] = merged
    try:
        return RunConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {k: plain(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, tuple):
            return [plain(v) for v in obj]
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        return obj

    return {
        "version": cfg.version,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "out_dir": cfg.out_dir,
        "episodes": cfg.episodes,
        "workload": plain(cfg.workload),
        "engine": plain(cfg.engine),
        "reward": plain(cfg.reward),
        "td3": plain(cfg.td3),
        "train": plain(cfg.train),
        "descriptors": {
            kind: {k: v for k, v in plain(desc).items() if k != "kind"}
            for kind, desc in cfg.descriptors.items()
        },
    }


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid json: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
