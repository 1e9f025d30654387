"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
Lists are comma separated; booleans accept true/false/yes/no/1/0. The full
key set with defaults is :data:`KEYS`; :func:`dump_config` writes every key,
so a resolved config file alone reproduces a run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossSpec
from .training import TrainConfig

VARIANTS = ("simmlm", "no_mofe", "conf_hinge", "static_mean")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> Tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "synth"
    M: int = 3
    C: int = 4
    dims: Tuple[int, ...] = (4, 4, 4)
    noise: Tuple[float, ...] = (1.0, 1.0, 3.0)
    centroid_scale: float = 1.0
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 2000
    seed: int = 0
    task: str = "classification"
    map_size: int = 16
    stage1_epochs: int = 20
    stage2_epochs: int = 20
    batch_size: int = 32
    lr_stage1: float = 0.01
    lr_stage2: Optional[float] = None
    lam: float = 0.1
    mofe_enabled: bool = True
    pair_strategy: str = "full_vs_sub"
    task_loss: str = "auto"
    mofe_detach_minus: bool = False
    expert_hidden: Tuple[int, ...] = (16,)
    gate_hidden: Tuple[int, ...] = (16,)
    gate_input: str = "raw"
    gate_sees_mask: bool = False
    freeze_experts: bool = False
    pretrain_experts: bool = True
    variant: str = "simmlm"
    bins: int = 20
    cr_score: str = "correct"
    out_dir: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.bins < 1:
            raise ConfigError("bins must be positive")
        if self.cr_score not in ("correct", "true_class_prob"):
            raise ConfigError(f"cr_score must be 'correct' or 'true_class_prob', got {self.cr_score!r}")
        # building the parts validates them
        self.synth()
        self.train_config()

    @property
    def resolved_task_loss(self) -> str:
        if self.task_loss != "auto":
            return self.task_loss
        return "cross_entropy" if self.task == "classification" else "dice_plus_bce"

    def synth(self) -> SynthConfig:
        return SynthConfig(self.M, self.C, self.dims, self.noise, self.centroid_scale, self.n_train,
                           self.n_val, self.n_test, self.seed, self.task, self.map_size)

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.resolved_task_loss, self.lam, self.mofe_enabled, "mofe", self.mofe_detach_minus)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.stage1_epochs, self.stage2_epochs, self.batch_size, self.lr_stage1,
                           self.lr_stage2, self.loss_spec(), self.pair_strategy, self.seed,
                           self.expert_hidden, self.gate_hidden, self.gate_input, self.gate_sees_mask,
                           self.freeze_experts, False, self.pretrain_experts)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


# file key -> (attribute, parser)
KEYS = {
    "name": ("name", str),
    "M": ("M", int),
    "C": ("C", int),
    "dims": ("dims", _ints),
    "noise": ("noise", _floats),
    "centroid_scale": ("centroid_scale", float),
    "n_train": ("n_train", int),
    "n_val": ("n_val", int),
    "n_test": ("n_test", int),
    "seed": ("seed", int),
    "task": ("task", str),
    "map_size": ("map_size", int),
    "stage1_epochs": ("stage1_epochs", int),
    "stage2_epochs": ("stage2_epochs", int),
    "batch_size": ("batch_size", int),
    "lr_stage1": ("lr_stage1", float),
    "lr_stage2": ("lr_stage2", _opt_float),
    "lambda": ("lam", float),
    "mofe_enabled": ("mofe_enabled", _bool),
    "pair_strategy": ("pair_strategy", str),
    "task_loss": ("task_loss", str),
    "mofe_detach_minus": ("mofe_detach_minus", _bool),
    "expert_hidden": ("expert_hidden", _ints),
    "gate_hidden": ("gate_hidden", _ints),
    "gate_input": ("gate_input", str),
    "gate_sees_mask": ("gate_sees_mask", _bool),
    "freeze_experts": ("freeze_experts", _bool),
    "pretrain_experts": ("pretrain_experts", _bool),
    "variant": ("variant", str),
    "bins": ("bins", int),
    "cr_score": ("cr_score", str),
    "out_dir": ("out_dir", str),
}

assert {a for a, _ in KEYS.values()} == {f.name for f in fields(ExperimentConfig)}


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        attr, parser = KEYS[key]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} (line {lineno}): {exc}") from None
    try:
        return replace(base or ExperimentConfig(), **values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(config: ExperimentConfig) -> str:
    return "".join(f"{key} = {_fmt(getattr(config, attr))}\n" for key, (attr, _) in KEYS.items())
