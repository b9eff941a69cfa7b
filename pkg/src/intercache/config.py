"""Parameter groups and the plain-text run configuration.

The on-disk format is INI (``[section]`` headers with ``key = value`` lines),
one section per parameter group.  Precedence is command-line overrides, then
the config file, then the dataclass defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

CONFIG_ENV_VAR = "INTERCACHE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 4
    grid_h: int = 16
    grid_w: int = 16
    d: int = 32
    heads: int = 4
    blocks: int = 2
    ffn_mult: int = 4
    steps: int = 4
    eta_max: float = 0.2
    eta_min: float = 0.04
    region_bias: float = 4.0
    # scale on self-attention and FFN residual deltas; cross-attention is unscaled
    residual_gain: float = 0.1
    noise_std: float = 0.3
    weight_seed: int = 0
    noise_seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("frames", "grid_h", "grid_w", "d", "heads", "blocks", "ffn_mult", "steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.d % self.heads:
            raise ConfigError("model.d must be divisible by model.heads")
        if not self.eta_max >= self.eta_min >= 0:
            raise ConfigError("need model.eta_max >= model.eta_min >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype must be float32 or float64")

    @property
    def n_tokens(self) -> int:
        return self.frames * self.grid_h * self.grid_w

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def eta(self, t: int) -> float:
        return self.eta_min + (self.eta_max - self.eta_min) * (1.0 - t / self.steps)


@dataclass(frozen=True)
class TgaaParams:
    a_k: float = 2.0
    a_o: float = 1.0
    enabled_key: bool = True
    enabled_output: bool = True

    def __post_init__(self):
        if self.a_k < 0 or self.a_o < 0:
            raise ConfigError("tgaa.a_k and tgaa.a_o must be >= 0")


@dataclass(frozen=True)
class SrdParams:
    r: int = 2
    r_prime: int = 4
    group_size: int = 2
    pool_factor: int = 2

    def __post_init__(self):
        if not self.r_prime >= self.r >= 0:
            raise ConfigError("need srd.r_prime >= srd.r >= 0")
        if self.group_size < 1 or self.pool_factor < 1:
            raise ConfigError("srd.group_size and srd.pool_factor must be >= 1")


@dataclass(frozen=True)
class SchedulerParams:
    tau: float = 0.75
    k1_frac: float = 0.25
    k2_frac: float = 0.75
    stage3_min: int = 1

    def __post_init__(self):
        if not 0 <= self.k1_frac <= self.k2_frac <= 1:
            raise ConfigError("need 0 <= scheduler.k1_frac <= scheduler.k2_frac <= 1")
        if self.stage3_min < 0:
            raise ConfigError("scheduler.stage3_min must be >= 0")
        if math.isnan(self.tau):
            raise ConfigError("scheduler.tau must be a number")


@dataclass(frozen=True)
class CacheParams:
    insert_on_hit: bool = False
    frozen: bool = False


@dataclass(frozen=True)
class WorkloadParams:
    clusters: int = 10
    prompts_per_cluster: int = 20
    p_object: float = 0.2
    p_attribute: float = 0.4
    p_background: float = 0.2
    p_verb: float = 0.3
    max_objects: int = 2
    seed: int = 0
    vocab_seed: int = 0
    warm_start: int = 0

    def __post_init__(self):
        for name in ("p_object", "p_attribute", "p_background", "p_verb"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"workload.{name} must lie in [0, 1]")
        if self.clusters < 1:
            raise ConfigError("workload.clusters must be >= 1")
        if self.prompts_per_cluster < 1:
            raise ConfigError("workload.prompts_per_cluster must be >= 1")
        if self.max_objects < 0:
            raise ConfigError("workload.max_objects must be >= 0")
        if not 0 <= self.warm_start <= self.clusters * self.prompts_per_cluster:
            raise ConfigError("workload.warm_start must be within the workload size")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tgaa: TgaaParams = field(default_factory=TgaaParams)
    srd: SrdParams = field(default_factory=SrdParams)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    cache: CacheParams = field(default_factory=CacheParams)
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    mode: str = "chorus"
    reference_oracle: bool = True
    records_path: str = "records.jsonl"
    summary_path: str = "summary.json"
    csv_path: str = "windows.csv"
    cache_dir: str = ""
    window: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.window < 1:
            raise ConfigError("run.window must be >= 1")


MODES = ("chorus", "nirvana", "baseline")

# Distilled (few-step) and vanilla (many-step) profiles.  The eta bounds of the
# 50-step profile are scaled so both profiles integrate the same total step size.
PROFILES: dict[str, dict[str, dict[str, Any]]] = {
    "distilled": {"model": {"steps": 4}, "scheduler": {"tau": 0.75}},
    "vanilla": {
        "model": {"steps": 50, "eta_max": 0.018, "eta_min": 0.0036},
        "scheduler": {"tau": 0.65},
    },
}

_GROUPS = {
    "model": ModelConfig,
    "tgaa": TgaaParams,
    "srd": SrdParams,
    "scheduler": SchedulerParams,
    "cache": CacheParams,
    "workload": WorkloadParams,
}
_RUN_KEYS = ("mode", "reference_oracle", "records_path", "summary_path", "csv_path",
             "cache_dir", "window")


def _coerce(raw: str, typ: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in fields(cls)}


def apply_overrides(cfg: RunConfig, items: Mapping[str, str] | Iterable[tuple[str, str]]) -> RunConfig:
    """Apply dotted ``group.key`` string overrides (``run.*`` for top-level keys)."""
    pairs = items.items() if isinstance(items, Mapping) else items
    groups: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for dotted, raw in pairs:
        if "." not in dotted:
            raise ConfigError(f"override key must look like group.key: {dotted!r}")
        group, key = dotted.split(".", 1)
        if group == "run":
            types = _field_types(RunConfig)
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown key run.{key}")
            top[key] = _coerce(raw, types[key], dotted)
        elif group in _GROUPS:
            types = _field_types(_GROUPS[group])
            if key not in types:
                raise ConfigError(f"unknown key {dotted}")
            groups.setdefault(group, {})[key] = _coerce(raw, types[key], dotted)
        else:
            raise ConfigError(f"unknown config section {group!r}")
    try:
        updated = {g: replace(getattr(cfg, g), **kv) for g, kv in groups.items()}
        return replace(cfg, **updated, **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def with_profile(cfg: RunConfig, name: str) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}")
    items = [(f"{g}.{k}", str(v)) for g, kv in PROFILES[name].items() for k, v in kv.items()]
    return apply_overrides(cfg, items)


def load_config(path: str | os.PathLike | None = None,
                overrides: Mapping[str, str] | Iterable[tuple[str, str]] = ()) -> RunConfig:
    """Build a RunConfig from defaults, an optional INI file, then overrides.

    A ``[run]`` section may carry ``profile = distilled|vanilla``; the profile is
    applied before the remaining file keys.
    """
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        items = []
        for section in parser.sections():
            for key, value in parser.items(section):
                if section == "run" and key == "profile":
                    cfg = with_profile(cfg, value.strip())
                    continue
                items.append((f"{section}.{key}", value))
        cfg = apply_overrides(cfg, items)
    return apply_overrides(cfg, overrides)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for group in _GROUPS:
        parser[group] = {k: str(v) for k, v in dataclasses.asdict(getattr(cfg, group)).items()}
    parser["run"] = {k: str(getattr(cfg, k)) for k in _RUN_KEYS}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)
