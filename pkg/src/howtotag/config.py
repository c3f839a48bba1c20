"""Experiment configuration: a nested YAML file plus command-line overrides."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .labelprep import DEFAULT_THRESHOLD
from .textprep import PreprocessConfig
from .train import DEFAULT_LEARNING_RATES, DEFAULT_MAX_LENS, TrainConfig

RESOLVED_NAME = "config.resolved.yaml"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    path: str = ""
    format: str | None = None
    train_fraction: float = 0.8


@dataclass
class LabelSection:
    threshold: int = DEFAULT_THRESHOLD


@dataclass
class TokenizerSection:
    max_vocab: int = 30000
    min_freq: int = 1
    max_len: int = 512


@dataclass
class ModelSection:
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    pooling: str | None = None


@dataclass
class TrainSection:
    learning_rate: float = 4e-4
    batch_size: int = 48
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    init_from_pretrain: bool = False
    # "best": highest test binary accuracy (earliest on ties); "last": final epoch
    checkpoint: str = "best"


@dataclass
class PretrainSection:
    objective: str = "mlm_pretrain"
    learning_rate: float = 4e-4
    batch_size: int = 48
    epochs: int = 1
    mask_rate: float = 0.15
    predict_fraction: float = 1.0
    orders_per_sequence: int = 1
    identity_order: bool = False


@dataclass
class EvaluateSection:
    decision_threshold: float = 0.5
    split: str = "test"


@dataclass
class SweepSection:
    learning_rates: list[float] = field(default_factory=lambda: list(DEFAULT_LEARNING_RATES))
    max_lens: list[int] = field(default_factory=lambda: list(DEFAULT_MAX_LENS))
    epochs: int | None = None


@dataclass
class ReportSection:
    sigma: float | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    labels: LabelSection = field(default_factory=LabelSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    report: ReportSection = field(default_factory=ReportSection)

    # ------------------------------------------------------------ derived

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def pooling(self) -> str:
        if self.model.pooling:
            return self.model.pooling
        return "last_token" if self.pretrain.objective == "plm_pretrain" else "first_token"

    def finetune_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(learning_rate=t.learning_rate, batch_size=t.batch_size, epochs=t.epochs,
                           max_len=self.tokenizer.max_len, beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
                           weight_decay=t.weight_decay, seed=self.seed, objective="finetune")

    def pretrain_config(self) -> TrainConfig:
        p, t = self.pretrain, self.train
        return TrainConfig(learning_rate=p.learning_rate, batch_size=p.batch_size, epochs=p.epochs,
                           max_len=self.tokenizer.max_len, beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
                           weight_decay=t.weight_decay, seed=self.seed, objective=p.objective,
                           mask_rate=p.mask_rate, predict_fraction=p.predict_fraction,
                           orders_per_sequence=p.orders_per_sequence, identity_order=p.identity_order)

    # ------------------------------------------------------------ io

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["pooling"] = self.pooling()
        return d

    def dump(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, raw: dict | None) -> "ExperimentConfig":
        return _build(cls, raw or {}, "")

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict[str, Any] | None = None) -> "ExperimentConfig":
        raw: dict = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {p}: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError(f"{p} must hold a mapping at top level")
        raw = copy.deepcopy(raw)
        for key, value in (overrides or {}).items():
            set_path(raw, key, value)
        return cls.from_dict(raw)


def set_path(raw: dict, dotted: str, value: Any) -> None:
    node = raw
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {part} is not a section")
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """``key.path=value`` with the value parsed as YAML (numbers, booleans, lists)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, text = item.split("=", 1)
    return key.strip(), yaml.safe_load(text)


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {where or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        current = getattr(defaults, name)
        if hasattr(current, "__dataclass_fields__"):
            kwargs[name] = _build(type(current), value, f"{where}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values in {where or '<root>'}: {exc}") from None
