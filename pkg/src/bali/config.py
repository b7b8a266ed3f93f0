"""Run configuration: nested sections, profile presets, yaml round-trip, and
dotted-path overrides.

The ``paper`` profile carries the published pretraining hyperparameters
(hidden size 768, 5 graph layers, 2 attention heads, neighbor cap 3, peak
learning rates 2e-5 / 1e-4, batch 256, 10 epochs, 65k steps); the ``tiny``
profile is the desk-scale default used by the tests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError

PATHWAYS = ("gat", "graphsage", "linearized", "distmult", "transe", "textual")
ALIGN_OBJECTIVES = ("infonce", "ms", "classification", "none")
POOLING_MODES = ("mean", "weighted", "gat", "transformer")


@dataclass
class GeneratorConfig:
    concepts: int = 200
    relations: int = 6
    synonyms_per_concept: tuple[int, int] = (4, 5)
    edges_per_node: tuple[int, int] = (1, 4)
    sentences_per_concept: tuple[int, int] = (4, 6)
    noise_rate: float = 0.03
    eval_mentions_per_concept: int = 1


@dataclass
class DataConfig:
    dir: str = "data"
    triples: str = "triples.jsonl"
    synonyms: str = "synonyms.jsonl"
    relations: str = "relations.jsonl"
    corpus: str = "corpus.jsonl"
    eval_mentions: str = "eval_mentions.jsonl"
    per_concept_cap: int = 10
    min_freq: int = 1
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def resolve(self, name: str) -> Path:
        root = Path(os.environ.get("BALI_DATA_DIR", "")) if self.dir == "" else Path(self.dir)
        return root / getattr(self, name)


@dataclass
class ModelConfig:
    dim: int = 64
    lm_layers: int = 2
    heads: int = 2
    max_len: int = 64
    ffn_mult: int = 4
    pre_norm: bool = True
    tie_mlm_head: bool = True
    pathway: str = "gat"
    gnn_layers: int = 3
    gat_heads: int = 2
    pooling: str = "mean"
    leaky_slope: float = 0.2


@dataclass
class ObjectiveConfig:
    align: str = "infonce"
    negatives_mode: str = "cross"
    tau: float = 0.07
    select_ratio: float = 0.15
    mlm_weight: float = 1.0
    align_weight: float = 1.0
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_epsilon: float = 0.5


@dataclass
class TrainerConfig:
    profile: str = "tiny"
    batch_size: int = 32
    steps: int = 2000
    epochs: int = 1
    lm_lr: float = 1e-3
    other_lr: float = 2e-3
    weight_decay: float = 0.01
    neighbor_cap: int = 3
    freeze_node_init: bool = False
    checkpoint_every: int = 500
    log_every: int = 50
    out_dir: str = "runs/tiny"


@dataclass
class EvalConfig:
    k: tuple[int, ...] = (1, 5)
    recall_k: int = 1
    mlm_sample: int = 200
    max_mentions: int = 0  # 0 = all


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.trainer.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.trainer.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.trainer.lm_lr <= 0 or self.trainer.other_lr <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if self.trainer.neighbor_cap < 0:
            raise ConfigurationError("neighbor_cap must be >= 0")
        if self.model.pathway not in PATHWAYS:
            raise ConfigurationError(f"unknown pathway {self.model.pathway!r}")
        if self.objective.align not in ALIGN_OBJECTIVES:
            raise ConfigurationError(f"unknown align objective {self.objective.align!r}")
        if self.model.pooling not in POOLING_MODES:
            raise ConfigurationError(f"unknown pooling mode {self.model.pooling!r}")
        if self.objective.negatives_mode not in ("cross", "paired"):
            raise ConfigurationError(f"unknown negatives_mode {self.objective.negatives_mode!r}")
        if self.objective.tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if not 0.0 <= self.objective.select_ratio <= 1.0:
            raise ConfigurationError("select_ratio must be in [0, 1]")
        if self.model.max_len < 3:
            raise ConfigurationError("max_len must be >= 3")

    def to_dict(self) -> dict:
        return _as_plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build_dataclass(cls, data, path="")
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


PROFILES: dict[str, dict] = {
    "tiny": {},
    "paper": {
        "model": {"dim": 768, "lm_layers": 12, "heads": 12, "max_len": 512,
                  "gnn_layers": 5, "gat_heads": 2},
        "trainer": {"profile": "paper", "batch_size": 256, "steps": 65000,
                    "epochs": 10, "lm_lr": 2e-5, "other_lr": 1e-4,
                    "neighbor_cap": 3, "out_dir": "runs/paper"},
    },
}


def _as_plain(value):
    """Json/yaml-safe copy: tuples become lists."""
    if isinstance(value, dict):
        return {k: _as_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_as_plain(v) for v in value]
    return value


def _build_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {path or '<root>'} must be a mapping")
    field_map = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(field_map)
    if unknown:
        where = path or "<root>"
        raise ConfigurationError(f"unknown config key(s) {sorted(unknown)} in {where}")
    kwargs = {}
    for name, f in field_map.items():
        if name not in data:
            continue
        value = data[name]
        sub = path + "." + name if path else name
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type in _SECTION_TYPES
        ):
            target = _SECTION_TYPES[f.type] if isinstance(f.type, str) else f.type
            kwargs[name] = _build_dataclass(target, value, sub)
        else:
            kwargs[name] = _coerce(value, f, sub)
    return cls(**kwargs)


_SECTION_TYPES = {
    "GeneratorConfig": GeneratorConfig,
    "DataConfig": DataConfig,
    "ModelConfig": ModelConfig,
    "ObjectiveConfig": ObjectiveConfig,
    "TrainerConfig": TrainerConfig,
    "EvalConfig": EvalConfig,
}


def _coerce(value, f: dataclasses.Field, path: str):
    default = f.default if f.default is not dataclasses.MISSING else (
        f.default_factory() if f.default_factory is not dataclasses.MISSING else None
    )
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path} must be a list")
        return tuple(type(default[0])(v) if default else v for v in value)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ConfigurationError(f"{path} must be a boolean")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigurationError(f"{path} must be an integer")
        out = int(value) if not isinstance(value, float) else int(value)
        if isinstance(value, float) and value != out:
            raise ConfigurationError(f"{path} must be an integer")
        return out
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{path} must be a number") from None
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{path} must be a string")
        return value
    return value


def _deep_update(base: dict, overlay: dict) -> dict:
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(
    config_path: str | Path | None = None,
    profile: str | None = None,
    overrides: dict[str, str] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Compose a RunConfig from (profile defaults, yaml file, dotted overrides)."""
    raw: dict = {}
    file_data: dict = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_data = yaml.safe_load(fh) or {}
        if not isinstance(file_data, dict):
            raise ConfigurationError("config file must hold a mapping")
    profile_name = profile or file_data.get("trainer", {}).get("profile", "tiny")
    if profile_name not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile_name!r}")
    raw = _deep_update(raw, json.loads(json.dumps(PROFILES[profile_name])))
    raw.setdefault("trainer", {})["profile"] = profile_name
    _deep_update(raw, file_data)
    for dotted, text in (overrides or {}).items():
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override path {dotted!r} crosses a scalar")
        node[parts[-1]] = yaml.safe_load(text)
    if seed is not None:
        raw["seed"] = seed
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
