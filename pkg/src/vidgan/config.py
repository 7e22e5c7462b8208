"""Whole-experiment configuration: one structured file covering data, models,
training, evaluation and prediction, validated up front with unknown keys
rejected. Two named presets exist: `desk` (defaults, workstation scale) and
`paper-appendix-b` (the 64x64 fidelity settings).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .data import SyntheticDatasetConfig
from .discriminators import SpatialDiscConfig, TemporalDiscConfig
from .evaluation import ClassifierConfig, EvalConfig
from .generator import GeneratorConfig
from .prediction import FPConfig
from .serialize import canonical_hash
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid, inconsistent, or unknown configuration content."""


@dataclass
class ExperimentConfig:
    run_name: str = "run"
    out_dir: str = "runs/run"
    seed: int = 0
    data: SyntheticDatasetConfig = field(default_factory=SyntheticDatasetConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    spatial_disc: SpatialDiscConfig = field(default_factory=SpatialDiscConfig)
    temporal_disc: TemporalDiscConfig = field(default_factory=TemporalDiscConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    prediction: FPConfig = field(default_factory=FPConfig)

    def validate(self) -> "ExperimentConfig":
        if self.data.resolution != self.generator.resolution:
            raise ConfigError(
                f"data.resolution ({self.data.resolution}) != "
                f"generator.resolution ({self.generator.resolution})")
        if self.data.clip_length < self.generator.clip_length:
            raise ConfigError(
                f"data.clip_length ({self.data.clip_length}) < "
                f"generator.clip_length ({self.generator.clip_length})")
        if self.data.num_classes != self.generator.num_classes:
            raise ConfigError(
                f"data.num_classes ({self.data.num_classes}) != "
                f"generator.num_classes ({self.generator.num_classes})")
        if self.spatial_disc.k > self.generator.clip_length:
            raise ConfigError(
                f"spatial_disc.k ({self.spatial_disc.k}) > "
                f"generator.clip_length ({self.generator.clip_length})")
        self.temporal_disc.phi_output_resolution(self.generator.resolution)
        return self

    def bundle(self) -> dict:
        """Plain nested dict of the full configuration (hash/checkpoint payload)."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
        return out

    @property
    def hash(self) -> str:
        return canonical_hash(_jsonable(self.bundle()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


_SECTION_TYPES = {
    "data": SyntheticDatasetConfig,
    "generator": GeneratorConfig,
    "spatial_disc": SpatialDiscConfig,
    "temporal_disc": TemporalDiscConfig,
    "training": TrainConfig,
    "evaluation": EvalConfig,
    "classifier": ClassifierConfig,
    "prediction": FPConfig,
}

_TUPLE_FIELDS = ("layer_constants", "velocity_range", "stddev_sweep", "values", "seeds")


def _build_section(cls, values: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) under '{path}': {sorted(unknown)}; "
                          f"valid keys: {sorted(names)}")
    coerced = {}
    for key, value in values.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid '{path}' section: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    top_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}; "
                          f"valid keys: {sorted(top_fields)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a mapping of fields")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs).validate()


def load_config(path: str, preset: str | None = None, overrides: dict | None = None
                ) -> ExperimentConfig:
    """Read a YAML config, optionally starting from a preset, applying dotted
    key=value overrides last."""
    base = preset_dict(preset) if preset else {}
    if path:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping")
        base = _merge(base, loaded)
    for dotted, value in (overrides or {}).items():
        _set_dotted(base, dotted, value)
    return config_from_dict(base)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-mapping key '{part}'")
    node[parts[-1]] = yaml.safe_load(value) if isinstance(value, str) else value


PRESETS = ("desk", "paper-appendix-b")


def preset_dict(name: str) -> dict:
    """Named starting points; `desk` is the dataclass defaults."""
    if name == "desk":
        return {}
    if name == "paper-appendix-b":
        return {
            "data": {"resolution": 64, "clip_length": 12},
            "generator": {"resolution": 64, "clip_length": 12, "ch": 128,
                          "layer_constants": [8, 8, 8, 4, 2]},
            "spatial_disc": {"k": 8, "ch": 128},
            "temporal_disc": {"phi": "avgpool2x2", "ch": 128},
            "training": {"batch_size": 512, "lr_g": 1e-4, "lr_d": 5e-4,
                         "d_steps_per_g": 2, "ema_decay": 0.9999,
                         "ema_start_step": 20000, "total_steps": 300000},
        }
    raise ConfigError(f"unknown preset {name!r}; choices: {PRESETS}")
