"""Experiment configuration: typed dataclasses <-> INI files.

One file with sections ``[data]``, ``[data.phantom]``, ``[network]``,
``[network.backbone]``, ``[loss]``, ``[train]``, ``[eval]`` and ``[output]``.
Values are Python literals (``(64, 64, 32)``, ``True``, ``1e-3``); bare words
are read as strings. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .head import NetworkConfig
from .loss import LossWeights
from .volume_data import PhantomSpec


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    manifest: str = ""
    folds: int = 4
    augment_flips: bool = True
    augment_rotations: tuple = (0, 1, 2, 3)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 1
    epochs: int = 20
    seed: int = 0
    augment: bool = True
    lr_schedule: str = "constant"     # or "cosine"
    bce_reduction: str = "mean"       # or "sum"
    dtype: str = "float32"
    checkpoint_dir: str = ""
    checkpoint_every: int = 1         # epochs; 0 keeps only the final checkpoint
    threshold: float = 0.5
    prefetch_depth: int = 2
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = from_dict(NetworkConfig, self.network)
        if isinstance(self.loss, dict):
            self.loss = from_dict(LossWeights, self.loss)
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.bce_reduction not in ("mean", "sum"):
            raise ConfigError(f"bce_reduction must be 'mean' or 'sum', got {self.bce_reduction!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")


@dataclass
class EvalConfig:
    threshold: float = 0.5
    units: str = "voxel"
    dump_attention: str = ""


@dataclass
class OutputConfig:
    dir: str = "runs/default"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def seed(self):
        return self.train.seed

    def train_config(self) -> TrainConfig:
        """TrainConfig with the experiment's network and loss sections attached."""
        return dataclasses.replace(self.train, network=self.network, loss=self.loss)


# --------------------------------------------------------------------------
# dataclass <-> dict
# --------------------------------------------------------------------------

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(x) for x in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _coerce(value, default, where):
    if isinstance(default, bool):
        if isinstance(value, str) and value.lower() in ("true", "yes", "on", "1", "false", "no", "off", "0"):
            return value.lower() in ("true", "yes", "on", "1")
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"{where}: expected a sequence, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        return str(value)
    return value


def from_dict(cls, data, where=""):
    """Build dataclass ``cls`` from a (possibly partial) nested dict."""
    if dataclasses.is_dataclass(data):
        return data
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where or cls.__name__}]: {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        sub = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(default):
            kwargs[key] = from_dict(type(default), value, sub)
        else:
            kwargs[key] = _coerce(value, default, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where or cls.__name__}]: {exc}") from exc


# --------------------------------------------------------------------------
# INI files
# --------------------------------------------------------------------------

def _parse_value(text):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_ini(text) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    nested = {}
    for section in cp.sections():
        node = nested
        for part in section.split("."):
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"section [{section}] collides with a key")
        for key, raw in cp.items(section):
            if isinstance(node.get(key), dict):
                raise ConfigError(f"[{section}] key {key!r} collides with a subsection")
            node[key] = _parse_value(raw)
    return from_dict(ExperimentConfig, nested)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_ini(text)


def dump_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str

    def walk(prefix, obj):
        flat = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(f"{prefix}.{f.name}", value)
            else:
                flat[f.name] = repr(_literal(value))
        if flat or prefix.count(".") == 0:
            cp[prefix] = flat

    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "train":
            # network/loss live in their own sections
            value = {k: v for k, v in to_dict(value).items() if k not in ("network", "loss")}
            cp["train"] = {k: repr(_literal(v)) for k, v in value.items()}
        else:
            walk(f.name, value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _literal(v):
    if isinstance(v, list):
        return tuple(_literal(x) for x in v)
    if isinstance(v, tuple):
        return tuple(_literal(x) for x in v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def save_config(path, cfg: ExperimentConfig):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_ini(cfg), encoding="utf-8")
