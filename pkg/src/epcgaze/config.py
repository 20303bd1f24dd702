"""Flat run configuration with an INI file format.

Every field lives in one section of the file::

    [run]
    seed = 0

    [train]
    mu = 0.15
    lambda_reg = none

Tuples are comma separated and ``none`` maps to ``None``.  Unknown sections
or keys raise :class:`ConfigError`.  :func:`dump_config` writes every field,
so a snapshot read back with :func:`load_config` gives an equal config.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .epc import LossWeights
from .errors import ConfigError, EpcGazeError
from .llr import NeighborConfig
from .model import ModelConfig
from .synthetic import GeneratorConfig
from .trainer import TrainConfig

SECTIONS = ("run", "data", "model", "train", "eval")


def _f(default, section, help_=""):
    if isinstance(default, (list, dict)):
        raise TypeError("mutable default")
    return field(default=default, metadata={"section": section, "help": help_})


@dataclass(frozen=True)
class RunConfig:
    # run
    seed: int = _f(0, "run", "top-level seed; every random stream derives from it")
    out: str = _f("runs", "run", "output directory")
    data: str | None = _f(None, "run", "dataset file; a world is generated when unset")
    checkpoint_every: int = _f(0, "run", "adapt checkpoint interval in iterations (0: stage boundaries only)")
    # data
    n_subjects: int = _f(10, "data")
    samples_per_subject: int = _f(1500, "data")
    input_dim: int = _f(16, "data")
    yaw_min: float = _f(-0.5, "data")
    yaw_max: float = _f(0.5, "data")
    pitch_min: float = _f(-0.4, "data")
    pitch_max: float = _f(0.2, "data")
    bias_shift_max: float = _f(0.15, "data")
    gain_min: float = _f(0.8, "data")
    gain_max: float = _f(1.2, "data")
    offset_scale: float = _f(0.5, "data")
    noise_sigma: float = _f(0.02, "data")
    true_hidden: int = _f(32, "data")
    true_slope: float = _f(2.0, "data")
    identical_subjects: bool = _f(False, "data")
    # model
    hidden_layers: tuple[int, ...] = _f((64, 64), "model")
    embedding_dim: int = _f(16, "model", "F_g")
    activation: str = _f("tanh", "model")
    head_bias: bool = _f(True, "model")
    # train
    pretrain_epochs: int = _f(5, "train", "N_s")
    pretrain_batch_size: int = _f(64, "train")
    joint_iterations: int = _f(1000, "train", "M_t")
    batch_source: int = _f(64, "train", "B_s")
    batch_target: int = _f(64, "train", "B_t")
    mu: float = _f(0.15, "train")
    k: int = _f(4, "train")
    lambda_reg: float | None = _f(None, "train", "none selects the trace-relative rule")
    lambda_epc: float = _f(1.0, "train")
    lambda_gaze: float = _f(1.0, "train")
    learning_rate: float = _f(0.001, "train")
    momentum: float = _f(0.9, "train")
    weight_decay: float = _f(5e-4, "train")
    llr_source: str = _f("groundtruth", "train", "groundtruth or prediction")
    early_stop_window: int = _f(100, "train")
    early_stop_tol: float | None = _f(1e-4, "train", "none disables early stopping")
    degenerate_fraction: float = _f(0.05, "train")
    # eval
    subjects: tuple[int, ...] | None = _f(None, "eval", "held-out subjects for loso/ablate (default: all)")

    def __post_init__(self):
        # build the component configs once so bad values fail at load time
        try:
            self.generator_config()
            self.model_config()
            self.train_config()
        except EpcGazeError as exc:
            raise ConfigError(str(exc)) from exc

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            n_subjects=self.n_subjects, samples_per_subject=self.samples_per_subject,
            input_dim=self.input_dim, yaw_range=(self.yaw_min, self.yaw_max),
            pitch_range=(self.pitch_min, self.pitch_max), bias_shift_max=self.bias_shift_max,
            gain_range=(self.gain_min, self.gain_max), offset_scale=self.offset_scale,
            noise_sigma=self.noise_sigma, true_hidden=self.true_hidden,
            true_slope=self.true_slope, identical_subjects=self.identical_subjects)

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_dim=self.input_dim, hidden_layers=self.hidden_layers,
                           embedding_dim=self.embedding_dim, activation=self.activation,
                           head_bias=self.head_bias)

    def neighbor_config(self) -> NeighborConfig:
        return NeighborConfig(mu=self.mu, k=self.k, lambda_reg=self.lambda_reg)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            pretrain_epochs=self.pretrain_epochs, pretrain_batch_size=self.pretrain_batch_size,
            joint_iterations=self.joint_iterations, batch_source=self.batch_source,
            batch_target=self.batch_target, neighbors=self.neighbor_config(),
            loss_weights=LossWeights(self.lambda_epc, self.lambda_gaze),
            learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, llr_source=self.llr_source,
            early_stop_window=self.early_stop_window, early_stop_tol=self.early_stop_tol,
            degenerate_fraction=self.degenerate_fraction, seed=self.seed)

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)


def field_names() -> set[str]:
    return {f.name for f in fields(RunConfig)}


def field_section(name: str) -> str:
    return {f.name: f.metadata["section"] for f in fields(RunConfig)}[name]


_HINTS = typing.get_type_hints(RunConfig)


def parse_value(name: str, text: str):
    """Convert the text form of field ``name`` to its typed value."""
    if name not in _HINTS:
        raise ConfigError(f"unknown config key {name!r}")
    hint = _HINTS[name]
    text = text.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional:
        if text.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    base = typing.get_origin(hint) or hint
    try:
        if base is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if base is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_overrides(path) -> dict:
    """Typed key/value pairs from a config file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            if key not in _HINTS:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            if field_section(key) != section:
                raise ConfigError(f"key {key!r} belongs in [{field_section(key)}], not [{section}]")
            values[key] = parse_value(key, text)
    return values


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    values = read_overrides(path) if path is not None else {}
    values.update(overrides)
    return RunConfig().replace(**values)


def dump_config(cfg: RunConfig, path) -> Path:
    """Write every field so the file fully determines the run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(cfg):
            if f.metadata["section"] == section:
                lines.append(f"{f.name} = {format_value(getattr(cfg, f.name))}")
        lines.append("")
    path.write_text("\n".join(lines))
    return path
