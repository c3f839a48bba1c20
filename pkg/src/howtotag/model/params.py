"""Model configuration, parameter initialisation and checkpoint files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

POOLING_MODES = ("first_token", "last_token", "mean")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_labels: int
    max_len: int = 512
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    pooling: str = "first_token"

    def __post_init__(self):
        for name in ("vocab_size", "num_labels", "max_len", "d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.pooling not in POOLING_MODES:
            raise ModelError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def layer_names(i: int) -> list[str]:
    pre = f"layers.{i}."
    return [pre + s for s in (
        "ln1.gain", "ln1.bias",
        "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
        "ln2.gain", "ln2.bias",
        "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
    )]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, ff = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
        "query_seed": (d,),
    }
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        shapes.update({
            pre + "ln1.gain": (d,), pre + "ln1.bias": (d,),
            pre + "attn.wq": (d, d), pre + "attn.bq": (d,),
            pre + "attn.wk": (d, d), pre + "attn.bk": (d,),
            pre + "attn.wv": (d, d), pre + "attn.bv": (d,),
            pre + "attn.wo": (d, d), pre + "attn.bo": (d,),
            pre + "ln2.gain": (d,), pre + "ln2.bias": (d,),
            pre + "ffn.w1": (d, ff), pre + "ffn.b1": (ff,),
            pre + "ffn.w2": (ff, d), pre + "ffn.b2": (d,),
        })
    shapes.update({
        "ln_f.gain": (d,), "ln_f.bias": (d,),
        "lm_bias": (cfg.vocab_size,),
        "head.weight": (d, cfg.num_labels), "head.bias": (cfg.num_labels,),
    })
    return shapes


@dataclass
class Parameters:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def check_finite(self) -> None:
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ModelError(f"parameter {k} holds non-finite values")


def init_params(cfg: ModelConfig, seed: int = 0) -> Parameters:
    """Normal(0, 0.02) embeddings, Glorot-uniform matrices, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            t = np.ones(shape)
        elif name in ("tok_emb", "pos_emb", "query_seed"):
            t = rng.normal(0.0, 0.02, size=shape)
        elif len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            t = rng.uniform(-limit, limit, size=shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(np.float64)
    return Parameters(cfg, tensors)


def save_checkpoint(path: str | Path, params: Parameters, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write an ``.npz`` file of little-endian float64 tensors with the config embedded as json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"config": params.config.to_dict(), "meta": meta or {}}
    arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in params.items():
        arrays["param/" + k] = np.ascontiguousarray(v, dtype="<f8")
    for k, v in (extra or {}).items():
        arrays[k] = np.ascontiguousarray(v, dtype="<f8")
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Parameters, dict[str, np.ndarray], dict]:
    """Returns ``(params, extra_arrays, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        cfg = ModelConfig.from_dict(header["config"])
        tensors, extra = {}, {}
        for k in z.files:
            if k.startswith("param/"):
                tensors[k[len("param/"):]] = z[k].astype(np.float64)
            elif k != "__header__":
                extra[k] = z[k].astype(np.float64)
    expected = param_shapes(cfg)
    if set(expected) != set(tensors) or any(tensors[k].shape != s for k, s in expected.items()):
        raise ModelError(f"checkpoint {path} does not match its embedded config")
    return Parameters(cfg, tensors), extra, header.get("meta", {})
