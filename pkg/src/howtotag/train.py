"""AdamW, binary cross-entropy fine-tuning, pretraining loops and grid search."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import ModelConfig, Parameters, init_params
from .model.encoder import classify_backward, classify_batched, classify_forward
from .model.objectives import mlm_loss, plm_loss, sample_factorization_orders, sequential_ar_nll

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
OBJECTIVES = ("finetune", "mlm_pretrain", "plm_pretrain")
DEFAULT_LEARNING_RATES = (1e-4, 2e-4, 3e-4, 4e-4, 5e-4)
DEFAULT_MAX_LENS = (484, 512)


class TrainingError(RuntimeError):
    pass


class NonFiniteError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4e-4
    batch_size: int = 48
    epochs: int = 40
    max_len: int = 512
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    objective: str = "finetune"
    mask_rate: float = 0.15
    predict_fraction: float = 1.0
    orders_per_sequence: int = 1
    identity_order: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise TrainingError("learning_rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainingError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise TrainingError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainingError("batch_size and epochs must be positive")
        if self.objective not in OBJECTIVES:
            raise TrainingError(f"objective must be one of {OBJECTIVES}")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class EncodedData:
    """Model-ready arrays: token ids and attention mask ``(N, M)``, targets ``(N, L)``."""

    input_ids: np.ndarray
    attention_mask: np.ndarray
    targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.input_ids)

    def subset(self, idx) -> "EncodedData":
        return EncodedData(self.input_ids[idx], self.attention_mask[idx],
                           None if self.targets is None else self.targets[idx])


# ---------------------------------------------------------------- loss

def bce_loss(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all ``N * L`` slots and its gradient w.r.t. ``probs``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is taken
    at the clamped value and passed straight through the clamp.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise TrainingError(f"probs {probs.shape} and targets {targets.shape} differ in shape")
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    n = probs.size
    loss = -float(np.sum(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p))) / n
    grad = (p - targets) / (p * (1.0 - p)) / n
    return loss, grad


def binary_accuracy_from_probs(probs, targets, threshold: float = 0.5) -> float:
    return float(np.mean((probs >= threshold) == (targets >= 0.5)))


def finetune_loss_and_grads(params: Parameters, ids, mask, targets):
    out = classify_forward(params, (ids, mask))
    loss, dprobs = bce_loss(out.probs, targets)
    grads = classify_backward(params, out, dprobs)
    return loss, grads, out.probs


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Parameters) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam/step": np.array(float(self.step))}
        out.update({"adam_m/" + k: v for k, v in self.m.items()})
        out.update({"adam_v/" + k: v for k, v in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], params: Parameters) -> "OptimizerState":
        if "adam/step" not in arrays:
            return cls.zeros(params)
        m = {k: arrays["adam_m/" + k].copy() for k in params.tensors}
        v = {k: arrays["adam_v/" + k].copy() for k in params.tensors}
        return cls(m, v, int(np.ravel(arrays["adam/step"])[0]))


def adamw_step(params: Parameters, grads: dict[str, np.ndarray], state: OptimizerState,
               cfg: TrainConfig) -> tuple[Parameters, OptimizerState]:
    """One AdamW update; weight decay is applied separately from the adaptive step."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    step = state.step + 1
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_t, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        decayed = theta - lr * cfg.weight_decay * theta
        new_t[name] = decayed - lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        new_m[name], new_v[name] = m, v
    return Parameters(params.config, new_t), OptimizerState(new_m, new_v, step)


# ---------------------------------------------------------------- epochs

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float = float("nan")
    test_accuracy: float = float("nan")


@dataclass
class EpochTrace:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> list[float]:
        return [getattr(e, name) for e in self.epochs]

    def rows(self) -> list[dict]:
        return [asdict(e) for e in self.epochs]


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(params: Parameters, state: OptimizerState, data: EncodedData, cfg: TrainConfig,
                epoch: int = 0) -> tuple[Parameters, OptimizerState, EpochStats]:
    """One shuffled pass of BCE fine-tuning; loss and accuracy accumulate per batch."""
    if len(data) == 0:
        raise TrainingError("no training data")
    total_loss, correct, slots = 0.0, 0, 0
    for idx in epoch_batches(len(data), cfg.batch_size, cfg.seed, epoch):
        ids, mask, y = data.input_ids[idx], data.attention_mask[idx], data.targets[idx]
        loss, grads, probs = finetune_loss_and_grads(params, ids, mask, y)
        if not math.isfinite(loss):
            raise NonFiniteError(f"non-finite loss in epoch {epoch}")
        total_loss += loss * y.size
        correct += int(np.sum((probs >= 0.5) == (y >= 0.5)))
        slots += y.size
        params, state = adamw_step(params, grads, state, cfg)
    return params, state, EpochStats(epoch + 1, total_loss / slots, correct / slots)


def evaluate_loss_accuracy(params: Parameters, data: EncodedData, batch_size: int = 64) -> tuple[float, float]:
    probs = classify_batched(params, data.input_ids, data.attention_mask, batch_size)
    loss, _ = bce_loss(probs, data.targets)
    return loss, binary_accuracy_from_probs(probs, data.targets)


@dataclass
class FitResult:
    params: Parameters
    trace: EpochTrace
    best_epoch: int
    final_params: Parameters
    state: OptimizerState


def fit(d_train: EncodedData, d_test: EncodedData | None, model_cfg: ModelConfig, train_cfg: TrainConfig,
        init: Parameters | None = None, on_epoch: Callable[[EpochStats], None] | None = None) -> FitResult:
    """Fine-tune for ``train_cfg.epochs`` and keep the best-by-test-accuracy parameters.

    Ties go to the earlier epoch. Without test data the train accuracy is used.
    """
    if d_train.targets is None:
        raise TrainingError("training data has no targets")
    params = init.copy() if init is not None else init_params(model_cfg, train_cfg.seed)
    if params.config.num_labels != d_train.targets.shape[1]:
        raise TrainingError("num_labels does not match the target width")
    state = OptimizerState.zeros(params)
    trace = EpochTrace()
    best, best_acc, best_epoch = params, -1.0, 0
    for epoch in range(train_cfg.epochs):
        params, state, stats = train_epoch(params, state, d_train, train_cfg, epoch)
        if d_test is not None and len(d_test):
            stats.test_loss, stats.test_accuracy = evaluate_loss_accuracy(params, d_test)
            score = stats.test_accuracy
        else:
            score = stats.train_accuracy
        trace.epochs.append(stats)
        if score > best_acc:
            best, best_acc, best_epoch = params, score, stats.epoch
        log.info("epoch %d train_loss=%.4f train_acc=%.4f test_loss=%.4f test_acc=%.4f", stats.epoch,
                 stats.train_loss, stats.train_accuracy, stats.test_loss, stats.test_accuracy)
        if on_epoch is not None:
            on_epoch(stats)
    return FitResult(best, trace, best_epoch, params, state)


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainStats:
    step: int
    epoch: int
    loss: float
    ar_nll: float = float("nan")


def _batch_orders(mask: np.ndarray, cfg: TrainConfig, seed) -> list:
    lengths = mask.sum(axis=1).astype(int)
    if cfg.identity_order:
        return [np.arange(T) for T in lengths]
    rng = np.random.default_rng(seed)
    orders = []
    for T in lengths:
        group = sample_factorization_orders(int(T), cfg.orders_per_sequence, int(rng.integers(2**32)))
        orders.append(group[0] if len(group) == 1 else group)
    return orders


def pretrain_epoch(params: Parameters, state: OptimizerState, data: EncodedData, cfg: TrainConfig,
                   epoch: int = 0) -> tuple[Parameters, OptimizerState, PretrainStats]:
    """One pass of masked-LM or permutation-LM pretraining.

    With ``identity_order`` set, the epoch also reports the left-to-right
    AR objective recomputed sequentially at the same parameters as each
    batch's loss, so the two columns can be compared.
    """
    if len(data) == 0:
        raise TrainingError("no pretraining data")
    total, ar_total, count = 0.0, 0.0, 0
    for bi, idx in enumerate(epoch_batches(len(data), cfg.batch_size, cfg.seed, epoch)):
        ids, mask = data.input_ids[idx], data.attention_mask[idx]
        batch_seed = [cfg.seed, epoch, bi]
        if cfg.objective == "mlm_pretrain":
            loss, grads = mlm_loss(params, (ids, mask), cfg.mask_rate, seed=batch_seed)
        elif cfg.objective == "plm_pretrain":
            orders = _batch_orders(mask, cfg, batch_seed)
            loss, grads = plm_loss(params, (ids, mask), orders, cfg.predict_fraction)
            if cfg.identity_order and cfg.predict_fraction == 1.0:
                ar = np.mean([sequential_ar_nll(params, ids[b, : int(mask[b].sum())]) for b in range(len(ids))])
                ar_total += ar * len(idx)
        else:
            raise TrainingError(f"{cfg.objective} is not a pretraining objective")
        if not math.isfinite(loss):
            raise NonFiniteError(f"non-finite pretraining loss in epoch {epoch}")
        total += loss * len(idx)
        count += len(idx)
        params, state = adamw_step(params, grads, state, cfg)
    ar_value = float(ar_total / count) if cfg.identity_order and cfg.objective == "plm_pretrain" else float("nan")
    return params, state, PretrainStats(state.step, epoch + 1, float(total / count), ar_value)


def pretrain(params: Parameters, data: EncodedData, cfg: TrainConfig, state: OptimizerState | None = None,
             start_epoch: int = 0) -> tuple[Parameters, OptimizerState, list[PretrainStats]]:
    state = OptimizerState.zeros(params) if state is None else state
    trace = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        params, state, stats = pretrain_epoch(params, state, data, cfg, epoch)
        log.info("pretrain epoch %d step %d loss=%.4f", stats.epoch, stats.step, stats.loss)
        trace.append(stats)
    return params, state, trace


# ---------------------------------------------------------------- grid search

def default_grid(base: TrainConfig, learning_rates: Sequence[float] = DEFAULT_LEARNING_RATES,
               max_lens: Sequence[int] = DEFAULT_MAX_LENS) -> list[TrainConfig]:
    return [base.replace(learning_rate=lr, max_len=m) for lr in learning_rates for m in max_lens]


def flag_best(rows: list[dict]) -> list[dict]:
    """Mark the highest-accuracy row; ties go to the lower learning rate, then the earlier row."""
    ok = [i for i, r in enumerate(rows) if r.get("error") is None and r.get("accuracy") is not None]
    best = min(ok, key=lambda i: (-rows[i]["accuracy"], rows[i]["learning_rate"], i)) if ok else None
    for i, r in enumerate(rows):
        r["best"] = i == best
    return rows


def grid_search(grid: Sequence[TrainConfig], model_cfg: ModelConfig,
                encode: Callable[[int], tuple[EncodedData, EncodedData]],
                score: Callable[[Parameters, EncodedData], dict],
                init: Callable[[ModelConfig, TrainConfig], Parameters | None] | None = None) -> list[dict]:
    """Fit every cell of ``grid``; a failing cell is recorded, not raised.

    ``encode(max_len)`` gives train/test data for a cell and
    ``score(params, test)`` must return ``accuracy``, ``macro_f1`` and
    ``micro_f1``.
    """
    if not grid:
        raise TrainingError("empty hyperparameter grid")
    rows = []
    for cfg in grid:
        row = {"learning_rate": cfg.learning_rate, "max_len": cfg.max_len,
               "accuracy": None, "macro_f1": None, "micro_f1": None, "best_epoch": None, "error": None}
        try:
            mcfg = model_cfg.replace(max_len=cfg.max_len)
            train_data, test_data = encode(cfg.max_len)
            start = init(mcfg, cfg) if init is not None else None
            result = fit(train_data, test_data, mcfg, cfg, init=start)
            s = score(result.params, test_data)
            row.update(accuracy=s["accuracy"], macro_f1=s["macro_f1"], micro_f1=s["micro_f1"],
                       best_epoch=result.best_epoch)
        except Exception as exc:  # recorded per cell
            log.warning("grid cell lr=%g max_len=%d failed: %s", cfg.learning_rate, cfg.max_len, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return flag_best(rows)
