"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SyntheticConfig
from .model import ModelConfig, parse_ablation
from .training import TrainConfig

RUN_ROOT_ENV = "SOLARCAST_RUN_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # synthetic data
    nodes: int = 8
    days: int = 60
    sampling_period: int = 600
    start: int = 1704067200
    amp_low: float = 750.0
    amp_high: float = 1000.0
    sunrise: str = "06:00"
    sunset: str = "18:00"
    latent_ar: float = 0.995
    latent_noise: float = 0.01
    clouds_per_day: float = 2.0
    cloud_depth: float = 0.8
    cloud_duration: int = 24
    delta: int = 3
    noise: float = 5.0
    # real data
    data_csv: str = ""
    max_fill: int = 3
    daylight_start: str = "06:00"
    daylight_end: str = "20:00"
    utc_offset_hours: int = 0
    # windows and splits
    split_train: float = 0.7
    split_val: float = 0.2
    split_test: float = 0.1
    daylight_train: bool = True
    daylight_eval: bool = True
    # model
    T: int = 24
    h: int = 12
    d_time: int = 10
    d_node: int = 10
    adj_dim: int = 16
    channels: int = 32
    c_out: int = 32
    kernel: int = 3
    depth: int = 3
    beta: float = 0.05
    q: int = 6
    l: int = 6
    m: int = 9
    r: int = 3
    k_top: int = 5
    heads: int = 4
    d_model: int = 32
    alpha_hidden: int = 16
    dtype: str = "float32"
    # training
    lr_start: float = 1e-3
    lr_end: float = 3e-4
    poly_power: float = 0.5
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    weight_decay: float = 1e-4
    min_delta: float = 1e-6
    seed: int = 0
    ablate: list = field(default_factory=list)
    # commands and paths
    run_root: str = ""
    run_dir: str = ""
    out: str = ""
    checkpoint: str = ""
    csv: str = ""
    split: str = "test"
    baseline: str = "persistence"
    ablation_suite: bool = False
    emit_alpha: bool = False

    PATH_KEYS = ("run_root", "run_dir", "out", "checkpoint", "csv")

    # ------------------------------------------------------------ builders

    def synthetic(self, seed: int | None = None) -> SyntheticConfig:
        return SyntheticConfig(
            n_nodes=self.nodes, days=self.days, sampling_period=self.sampling_period,
            start=self.start, amp_low=self.amp_low, amp_high=self.amp_high,
            sunrise=self.sunrise, sunset=self.sunset, latent_ar=self.latent_ar,
            latent_noise=self.latent_noise, clouds_per_day=self.clouds_per_day,
            cloud_depth=self.cloud_depth, cloud_duration=self.cloud_duration,
            delta=self.delta, noise=self.noise, seed=self.seed if seed is None else seed,
        )

    def model(self, n_nodes: int) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)} - {"n_nodes", "d_in"}
        return ModelConfig(n_nodes=n_nodes, **{k: getattr(self, k) for k in names})

    def training(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)} - {"beta1", "beta2", "eps"}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def ablation(self) -> frozenset:
        return parse_ablation(self.ablate)

    def ratios(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def root(self) -> Path:
        return Path(self.run_root or os.environ.get(RUN_ROOT_ENV) or "runs")

    # ------------------------------------------------------------ text form

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self.PATH_KEYS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {format_value(v)}")
        return "\n".join(lines) + "\n"

    def validate(self) -> "RunConfig":
        try:
            self.ablation()
            self.synthetic().validate()
            self.training().validate()
            self.model(self.nodes).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if abs(sum(self.ratios()) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.ratios()}")
        if self.baseline not in ("persistence", "none"):
            raise ConfigError(f"baseline must be 'persistence' or 'none', got {self.baseline!r}")
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"split must be train, val or test, got {self.split!r}")
        return self


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, text: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "list":
            return [x for x in text.replace(",", " ").split() if x]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def read_config_file(path) -> dict:
    out = {}
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected 'key = value'")
        k, v = line.split("=", 1)
        k = k.strip().replace("-", "_")
        out[k] = parse_value(k, v)
    return out


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then command-line overrides."""
    values = {}
    values.update(file_values or {})
    values.update(overrides or {})
    unknown = set(values) - set(FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    return RunConfig(**values).validate()
