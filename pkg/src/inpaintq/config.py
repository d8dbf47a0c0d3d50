"""Experiment configuration: TOML/JSON files, dotted overrides, hashing and seeded sub-streams.

Precedence, lowest first: built-in defaults, the config file, ``--set``
overrides, then dedicated CLI flags such as ``--seed``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

PRECISION_NAMES = ("fp32", "fp16", "int8")
SAMPLER_NAMES = ("ddim", "euler_ancestral")


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class SamplerConfig:
    name: str = "euler_ancestral"
    steps: int = 150
    guidance: float = 16.0
    strength: float = 0.5


@dataclass
class SweepConfig:
    levels: list[int] = field(default_factory=lambda: [0, *range(10, 201, 10)])
    inpaint_precisions: list[str] = field(default_factory=lambda: list(PRECISION_NAMES))
    model_precisions: list[str] = field(default_factory=lambda: list(PRECISION_NAMES))
    n_original: int = 4
    n_test: int = 100
    n_calib: int = 16
    objects_per_synthetic: int = 2
    jitter_shift: float = 0.5
    jitter_scale: float = 0.0
    max_attempts: int = 1000


@dataclass
class WorldConfig:
    size: int = 32
    obj: int = 7
    noise: float = 0.5
    shape_noise: float = 0.25


@dataclass
class GeneratorConfig:
    n_crops: int = 2000
    margin: int = 2
    hidden: int = 128
    train_steps: int = 3000
    batch_size: int = 256
    lr: float = 2e-3
    p_uncond: float = 0.1
    n_calib: int = 512


@dataclass
class QuantConfig:
    scheme: str = "minmax"
    symmetry: str = "asymmetric"
    granularity: str = "per_channel"
    percentile: float = 99.99


@dataclass
class DetectorSection:
    template_size: int = 7
    score_thresh: float = 0.5
    nms_iou: float = 0.3


@dataclass
class StatsConfig:
    alpha: float = 0.05
    family: str = "setting"


@dataclass
class BenchConfig:
    warmup: int = 2
    runs: int = 20
    batch: int = 64
    mock_intervals_ms: list[float] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    detector: DetectorSection = field(default_factory=DetectorSection)
    stats: StatsConfig = field(default_factory=StatsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def identity(self) -> dict:
        """Every field that can change results; the output location is not one."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def validate(self) -> "ExperimentConfig":
        s = self.sweep
        if self.sampler.name not in SAMPLER_NAMES:
            raise ConfigError(f"unknown sampler {self.sampler.name!r}; choose from {SAMPLER_NAMES}")
        for p in (*s.inpaint_precisions, *s.model_precisions):
            if p not in PRECISION_NAMES:
                raise ConfigError(f"unknown precision {p!r}; choose from {PRECISION_NAMES}")
        if any(lv < 0 for lv in s.levels) or len(set(s.levels)) != len(s.levels):
            raise ConfigError("levels must be distinct nonnegative percents")
        if not 0.0 <= self.sampler.strength <= 1.0:
            raise ConfigError("sampler.strength must lie in [0, 1]")
        if self.quant.scheme not in ("minmax", "percentile"):
            raise ConfigError(f"unknown quant scheme {self.quant.scheme!r}")
        if self.quant.symmetry not in ("symmetric", "asymmetric"):
            raise ConfigError(f"unknown quant symmetry {self.quant.symmetry!r}")
        if self.quant.granularity not in ("per_tensor", "per_channel"):
            raise ConfigError(f"unknown quant granularity {self.quant.granularity!r}")
        if self.stats.family not in ("setting", "table"):
            raise ConfigError(f"unknown stats family {self.stats.family!r}")
        if s.n_original < 1 or s.n_test < 1:
            raise ConfigError("dataset sizes must be positive")
        return self


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k)
        if dataclasses.is_dataclass(default):
            kwargs[k] = _build(type(default), v, f"{where}.{k}".lstrip("."))
        else:
            kwargs[k] = _coerce(default, v, f"{where}.{k}".lstrip("."))
    return cls(**kwargs)


def _coerce(default, value, key):
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = json.loads(value)
            if not isinstance(value, list):
                raise ValueError("not a list")
            return list(value)
        return str(value) if isinstance(default, str) else value
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {value!r} ({e})") from e


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    try:
        if p.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {p}: {e}") from e


def apply_override(data: dict, assignment: str) -> None:
    """``section.key=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key} does not name a config field")
    node[parts[-1]] = value


def make_config(path=None, overrides=(), **flags) -> ExperimentConfig:
    data: dict = load_config_file(path) if path else {}
    for o in overrides:
        apply_override(data, o)
    for k, v in flags.items():
        if v is not None:
            data[k] = v
    return _build(ExperimentConfig, data, "").validate()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(cfg) -> str:
    """sha256 of the canonical JSON form; independent of key order and of ``output_dir``."""
    data = cfg.identity() if hasattr(cfg, "identity") else {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. ``"toydet:test-set"``) under one root seed."""
    digest = hashlib.sha256(name.encode()).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(root_seed), spawn_key=key))
