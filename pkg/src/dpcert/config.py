"""Experiment configuration: dataclasses with a strict JSON round-trip.

Unknown keys, missing tags and wrongly typed values raise ``ConfigError``.
Tagged unions (objective, dataset) are written as ``{"kind": ..., **fields}``.
"""

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from dpcert.certify import SmoothingConfig
from dpcert.errors import ConfigError
from dpcert.metrics import DEFAULT_THRESHOLDS, AttackConfig, BinSpec
from dpcert.objectives import Gaussian
from dpcert.privacy import ClipRule, TrainingConfig

DEFAULT_RADIUS_GRID = tuple(0.25 * i for i in range(9))


@dataclass(frozen=True)
class SyntheticData:
    n: int = 2000
    d: int = 16
    classes: int = 4
    cluster_spread: float = 0.25
    seed: int = 0
    test_n: int = 500
    kind = "synthetic"

    def __post_init__(self):
        if self.n < 1 or self.test_n < 1:
            raise ConfigError("synthetic n and test_n must be >= 1")
        if self.classes < 2 or self.d < 2:
            raise ConfigError("synthetic data needs classes >= 2 and d >= 2")
        if self.cluster_spread < 0:
            raise ConfigError("cluster_spread must be >= 0")


@dataclass(frozen=True)
class IdxData:
    images: str
    labels: str
    test_images: str
    test_labels: str
    limit: Optional[int] = None
    test_limit: Optional[int] = None
    kind = "idx"


DatasetSpec = Union[SyntheticData, IdxData]


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be integers >= 1")


@dataclass(frozen=True)
class PrivacyConfig:
    noise_multiplier: Optional[float] = None   # None: calibrate to target_epsilon
    target_epsilon: float = 3.0
    delta: float = 1e-5
    clip_kind: str = "standard"
    clip_bound: Optional[float] = 1.0          # None: no clipping
    psac_r: float = 0.01
    epsilon_budget: Optional[float] = None     # stop training before exceeding this

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.target_epsilon > 0:
            raise ConfigError("target_epsilon must be > 0")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ConfigError("noise_multiplier must be >= 0")
        if self.noise_multiplier is None and self.clip_bound is None:
            raise ConfigError("calibrated noise needs a finite clip_bound")
        self.clip_rule()

    def clip_rule(self):
        bound = math.inf if self.clip_bound is None else self.clip_bound
        return ClipRule(self.clip_kind, bound, self.psac_r)


@dataclass(frozen=True)
class EvalConfig:
    certify_count: Optional[int] = None        # None: the whole test split
    metrics_count: int = 100
    radius_grid: tuple = DEFAULT_RADIUS_GRID
    bin_width: float = 0.25
    thresholds: tuple = DEFAULT_THRESHOLDS
    histogram: BinSpec = field(default_factory=BinSpec)
    log_every: Optional[int] = None            # accountant log period; None: one epoch

    def __post_init__(self):
        if self.certify_count is not None and self.certify_count < 1:
            raise ConfigError("certify_count must be >= 1")
        if self.metrics_count < 1:
            raise ConfigError("metrics_count must be >= 1")
        g = self.radius_grid
        if not g or g[0] < 0 or any(b < a for a, b in zip(g, g[1:])):
            raise ConfigError("radius_grid must be nonnegative and ascending")
        if not self.bin_width > 0:
            raise ConfigError("bin_width must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=SyntheticData)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"


# -- serialization ---------------------------------------------------------

def _is_tagged_union(tp):
    args = typing.get_args(tp)
    return (typing.get_origin(tp) in (Union, types.UnionType)
            and args and all(dataclasses.is_dataclass(a) and hasattr(a, "kind") for a in args))


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        if "kind" in type(obj).__dict__:
            out["kind"] = obj.kind
        for f in dataclasses.fields(obj):
            out[f.name] = to_dict(getattr(obj, f.name))
        return out
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _parse(tp, value, path):
    origin = typing.get_origin(tp)
    if _is_tagged_union(tp):
        if not isinstance(value, dict) or "kind" not in value:
            raise ConfigError(f"{path}: expected an object with a 'kind' tag")
        options = {a.kind: a for a in typing.get_args(tp)}
        if value["kind"] not in options:
            raise ConfigError(f"{path}: unknown kind {value['kind']!r}, expected one of {sorted(options)}")
        body = {k: v for k, v in value.items() if k != "kind"}
        return _parse_dataclass(options[value["kind"]], body, path)
    if origin in (Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        if len(inner) != 1:
            raise ConfigError(f"{path}: unsupported union type")
        return _parse(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _parse_dataclass(tp, value, path)
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(_parse_scalar(v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _parse_scalar(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return v


def _parse_dataclass(cls, value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {k: _parse(hints[k], v, f"{path}.{k}") for k, v in value.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(data):
    return _parse_dataclass(ExperimentConfig, data, "config")


def dumps(cfg):
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(data)


def load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


# -- presets ------------------------------------------------------------

def preset(name):
    if name == "table1-trend":
        return ExperimentConfig(
            dataset=SyntheticData(n=2000, d=16, classes=8, cluster_spread=0.1, seed=0, test_n=500),
            model=ModelConfig(hidden=(64,), activation="tanh"),
            training=TrainingConfig(learning_rate=0.5, expected_batch=64, steps=300,
                                    augmentations=2, smoothing_sigma=0.25, objective=Gaussian(), seed=0),
            privacy=PrivacyConfig(noise_multiplier=None, target_epsilon=3.0, delta=1e-5),
            smoothing=SmoothingConfig(sigma=0.25),
            evaluation=EvalConfig(certify_count=200),
            output_dir="runs/table1-trend",
        )
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("table1-trend",)
