"""Experiment configuration: dataclasses plus the YAML run-config reader."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

VARIANTS = ("aila1", "aila2", "plain", "residual_sum", "dense_concat")
BASELINES = ("plain", "residual_sum", "dense_concat")
BASE_KINDS = ("lstm", "mlp")
HEAD_KINDS = ("regression", "binary", "multiclass")
LOSS_KINDS = ("mse", "binary_ce", "multiclass_ce")
DATA_KINDS = ("long_memory", "token", "csv")


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


@dataclass
class ModelConfig:
    variant: str = "aila2"
    num_layers: int = 4
    hidden: int = 64
    d_k: int = 64
    d_v: int = 64
    heads: int = 1
    base_kind: str = "lstm"
    head_kind: str = "regression"
    num_classes: int = 2
    input_dim: int = 1
    vocab_size: int | None = None
    embed_dim: int | None = None
    task_dim: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.base_kind not in BASE_KINDS:
            raise ConfigError(f"unknown base_kind {self.base_kind!r}; expected one of {BASE_KINDS}")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head_kind {self.head_kind!r}; expected one of {HEAD_KINDS}")
        for name in ("num_layers", "hidden", "d_k", "d_v", "heads", "input_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.variant == "aila2":
            if self.d_v != self.hidden:
                raise ConfigError(f"d_v={self.d_v} must equal hidden={self.hidden} for the residual add")
            if self.d_k % self.heads or self.d_v % self.heads:
                raise ConfigError(f"d_k={self.d_k}/d_v={self.d_v} must be divisible by heads={self.heads}")
        if self.head_kind == "multiclass" and self.num_classes < 2:
            raise ConfigError("multiclass head needs num_classes >= 2")
        if self.vocab_size is not None and self.base_kind != "lstm":
            raise ConfigError("token inputs require the lstm base")
        if self.task_dim is not None:
            if self.task_dim < 1:
                raise ConfigError("task_dim must be positive when set")
            if self.variant != "aila1":
                raise ConfigError("a task embedding is only used by the aila1 integrator")

    @property
    def sequence(self) -> bool:
        return self.base_kind == "lstm"

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.head_kind == "multiclass" else 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    early_stop_patience: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    loss_kind: str = "mse"
    grad_clip: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive when set")


@dataclass
class DataSpec:
    """Where examples come from; ``params`` are passed to the matching loader."""

    kind: str = "long_memory"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"unknown data kind {self.kind!r}; expected one of {DATA_KINDS}")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataSpec
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "data": dataclasses.asdict(self.data),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(model=ModelConfig(**d["model"]), train=TrainConfig(**d["train"]),
                   data=DataSpec(**d["data"]), output_dir=d.get("output_dir", "runs"))


def loss_for_head(head_kind: str) -> str:
    return {"regression": "mse", "binary": "binary_ce", "multiclass": "multiclass_ce"}[head_kind]


# ---------------------------------------------------------------------------
# YAML run-config files

def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


# section name -> allowed nested keys (None: scalar or free-form value)
RUN_SECTIONS: dict[str, set[str] | None] = {
    "model": _fields(ModelConfig), "train": _fields(TrainConfig),
    "data": {"kind", "params"}, "output_dir": None,
}


def _mapping_items(node: yaml.MappingNode):
    for key_node, value_node in node.value:
        yield key_node.value, key_node.start_mark.line + 1, value_node


def _check_keys(node, allowed, where: str) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{where}: expected a mapping at line {node.start_mark.line + 1}")
    for key, line, _ in _mapping_items(node):
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where} at line {line}")


def load_checked_yaml(text: str, sections: dict[str, set[str] | None], source: str = "<string>") -> dict:
    """``yaml.safe_load`` after rejecting unknown top-level and section keys (with line numbers)."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from exc
    if root is None:
        raise ConfigError(f"{source}: empty config")
    _check_keys(root, sections, f"{source} (top level)")
    for key, _, node in _mapping_items(root):
        allowed = sections[key]
        if allowed is not None:
            _check_keys(node, allowed, f"{source} section {key!r}")
    return yaml.safe_load(text) or {}


def apply_overrides(raw: dict, overrides, sections: dict[str, set[str] | None]) -> dict:
    """Apply ``section.key=value`` strings (values parsed as YAML) on top of ``raw``."""
    for item in overrides or ():
        key, sep, value = item.partition("=")
        parts = key.split(".")
        if not sep or not all(parts):
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        head = parts[0]
        if head not in sections:
            raise ConfigError(f"unknown key {head!r} in override {item!r}")
        allowed = sections[head]
        if allowed is None and len(parts) > 1:
            raise ConfigError(f"{head!r} takes a single value, not {key!r}")
        if allowed is not None and (len(parts) < 2 or parts[1] not in allowed):
            raise ConfigError(f"unknown key {key!r} in override {item!r}")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key!r}: {part!r} is not a mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def parse_run_config(text: str, source: str = "<string>", overrides=()) -> RunConfig:
    """Parse a run-config document, rejecting unknown keys with their line number."""
    raw = apply_overrides(load_checked_yaml(text, RUN_SECTIONS, source), overrides, RUN_SECTIONS)
    try:
        model = ModelConfig(**(raw.get("model") or {}))
        train = TrainConfig(**(raw.get("train") or {}))
        data = DataSpec(**(raw.get("data") or {}))
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(model=model, train=train, data=data, output_dir=str(raw.get("output_dir", "runs")))


def load_run_config(path: str | Path, overrides=()) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(), source=str(path), overrides=overrides)
