"""Run configuration: one YAML file drives the whole pipeline.

Every experiment parameter has a config key with its conventional default;
unknown keys are rejected so that typos cannot silently fall back to
defaults. ``COLDWARM_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .data import ColumnSchema
from .errors import ConfigError
from .itemscan import DEFAULT_K_LIST as ITEM_K_LIST, DEFAULT_N_GRID
from .userscan import DEFAULT_K_LIST as USER_K_LIST

OUTPUT_DIR_ENV = "COLDWARM_OUTPUT_DIR"


@dataclass(frozen=True)
class DatasetConfig:
    path: str = ""
    delimiter: str = ","
    has_header: bool = False
    columns: dict = field(default_factory=lambda: {"user": 0, "item": 1, "timestamp": 2})
    on_malformed: str = "skip"
    pcore: int = 0  # 0 disables the optional p-core preprocessing

    def schema(self) -> ColumnSchema:
        cols = dict(self.columns)
        unknown = set(cols) - {"user", "item", "timestamp", "weight"}
        if unknown:
            raise ConfigError(f"unknown dataset.columns keys: {sorted(unknown)}")
        for name in ("user", "item", "timestamp"):
            if name not in cols:
                raise ConfigError(f"dataset.columns must map {name!r}")
        return ColumnSchema(
            user=cols["user"], item=cols["item"], timestamp=cols["timestamp"],
            weight=cols.get("weight"), delimiter=self.delimiter, has_header=self.has_header,
        )


@dataclass(frozen=True)
class SplitConfig:
    q: float = 0.9
    val_fraction: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "ease"
    grid: dict = field(default_factory=dict)  # empty = built-in default grid
    params: dict = field(default_factory=dict)  # set to skip tuning entirely
    matrix_mode: str = "binary"


@dataclass(frozen=True)
class TuningConfig:
    budget: int = 20
    seed: int = 0
    k: int = 10


@dataclass(frozen=True)
class ItemScanSection:
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N_GRID))
    s_items: int = 1000
    k_list: list = field(default_factory=lambda: list(ITEM_K_LIST))
    seed: int = 0


@dataclass(frozen=True)
class UserScanSection:
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N_GRID))
    k_list: list = field(default_factory=lambda: list(USER_K_LIST))
    seed: int = 0


@dataclass(frozen=True)
class DetectConfig:
    window: int = 5
    n_boot: int = 1000
    level: float = 0.95
    seed: int = 0
    metric: str = ""  # empty = ndcg_star for items, ndcg for users
    k: int = 10


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    item_scan: ItemScanSection = field(default_factory=ItemScanSection)
    user_scan: UserScanSection = field(default_factory=UserScanSection)
    detect: DetectConfig = field(default_factory=DetectConfig)
    filter_seen: bool = True
    n_boot: int = 1000
    workers: int = 0  # 0 = all available cores
    output_dir: str = "runs"

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir


_SECTIONS = {
    "dataset": DatasetConfig,
    "split": SplitConfig,
    "model": ModelConfig,
    "tuning": TuningConfig,
    "item_scan": ItemScanSection,
    "user_scan": UserScanSection,
    "detect": DetectConfig,
}

_RANGES = {
    ("split", "q"): lambda v: 0.0 < v < 1.0,
    ("split", "val_fraction"): lambda v: 0.0 <= v < 1.0,
    ("tuning", "budget"): lambda v: v >= 1,
    ("detect", "window"): lambda v: v >= 2,
    ("detect", "level"): lambda v: 0.0 < v < 1.0,
    ("detect", "n_boot"): lambda v: v >= 1,
    ("item_scan", "s_items"): lambda v: v >= 1,
    ("dataset", "pcore"): lambda v: v >= 0,
}


def _build_section(cls, data: dict, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    try:
        section = cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc
    for f in fields(cls):
        check = _RANGES.get((name, f.name))
        if check and not check(getattr(section, f.name)):
            raise ConfigError(f"{name}.{f.name} out of range: {getattr(section, f.name)!r}")
    return section


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top_fields = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kwargs[name] = _build_section(_SECTIONS[name], value, name)
        else:
            kwargs[name] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 0:
        raise ConfigError(f"workers must be >= 0, got {cfg.workers}")
    if not 1 <= cfg.n_boot:
        raise ConfigError(f"n_boot must be >= 1, got {cfg.n_boot}")
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            out[f.name] = {sf.name: getattr(value, sf.name) for sf in fields(type(value))}
        else:
            out[f.name] = value
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data or {})


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True, default_flow_style=False)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` CLI overrides on top of a config."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = dotted.split(".")
        target = data
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config section in override: {dotted!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key in override: {dotted!r}")
        target[parts[-1]] = value
    return config_from_dict(data)
