"""Multi-label evaluation metrics and curve smoothing for reports.

Macro F1 here is the harmonic mean of macro-averaged precision and
macro-averaged recall. The mean of per-label F1 scores is reported next to
it as ``mean_label_f1``; the two generally differ.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .labelprep import LabelVocabulary
from .model import Parameters
from .model.encoder import classify_batched

DEFAULT_DECISION_THRESHOLD = 0.5


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def n_labels(self) -> int:
        return len(self.tp)

    @property
    def totals(self) -> tuple[int, int, int, int]:
        """Summed ``(TP, FP, TN, FN)`` over labels."""
        return int(self.tp.sum()), int(self.fp.sum()), int(self.tn.sum()), int(self.fn.sum())


def confusion(preds, targets) -> ConfusionCounts:
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise MetricsError(f"preds {preds.shape} and targets {targets.shape} must be equal N x L shapes")
    p = preds.astype(bool)
    t = targets.astype(bool)
    return ConfusionCounts(
        tp=(p & t).sum(axis=0).astype(np.int64),
        fp=(p & ~t).sum(axis=0).astype(np.int64),
        tn=(~p & ~t).sum(axis=0).astype(np.int64),
        fn=(~p & t).sum(axis=0).astype(np.int64),
    )


def binary_accuracy(c: ConfusionCounts) -> float:
    tp, fp, tn, fn = c.totals
    total = tp + fp + tn + fn
    if total == 0:
        raise MetricsError("no evaluated slots")
    return (tn + tp) / total


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # zero denominators contribute 0
    out = np.zeros(len(num), dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def per_label_precision_recall(c: ConfusionCounts) -> tuple[np.ndarray, np.ndarray]:
    return _ratio(c.tp, c.tp + c.fp), _ratio(c.tp, c.tp + c.fn)


def macro_precision_recall(c: ConfusionCounts) -> tuple[float, float]:
    if c.n_labels < 1:
        raise MetricsError("need at least one label")
    p, r = per_label_precision_recall(c)
    return float(p.mean()), float(r.mean())


def macro_f1(p_ma: float, r_ma: float) -> float:
    if p_ma + r_ma <= 0:
        return 0.0
    return 2.0 * p_ma * r_ma / (p_ma + r_ma)


def micro_f1(c: ConfusionCounts) -> float:
    tp, fp, _, fn = c.totals
    if tp + fp + fn == 0:
        return 0.0
    return tp / (tp + 0.5 * (fp + fn))


@dataclass
class MetricsReport:
    binary_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_f1: float
    mean_label_f1: float
    decision_threshold: float
    n_examples: int
    per_label: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def headline(self) -> dict:
        return {k: getattr(self, k) for k in
                ("binary_accuracy", "macro_precision", "macro_recall", "macro_f1", "micro_f1")}

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def save_per_label_csv(self, path: str | Path) -> None:
        cols = ["label", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "support"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(self.per_label)


def metrics_report(preds, targets, label_names: Sequence[str] | None = None,
                   decision_threshold: float = DEFAULT_DECISION_THRESHOLD) -> MetricsReport:
    c = confusion(preds, targets)
    p_ma, r_ma = macro_precision_recall(c)
    p, r = per_label_precision_recall(c)
    f = _ratio(2 * p * r, p + r)
    names = list(label_names) if label_names is not None else [str(i) for i in range(c.n_labels)]
    per_label = [
        {"label": names[i], "tp": int(c.tp[i]), "fp": int(c.fp[i]), "tn": int(c.tn[i]), "fn": int(c.fn[i]),
         "precision": float(p[i]), "recall": float(r[i]), "f1": float(f[i]),
         "support": int(c.tp[i] + c.fn[i])}
        for i in range(c.n_labels)
    ]
    return MetricsReport(
        binary_accuracy=binary_accuracy(c),
        macro_precision=p_ma,
        macro_recall=r_ma,
        macro_f1=macro_f1(p_ma, r_ma),
        micro_f1=micro_f1(c),
        mean_label_f1=float(f.mean()),
        decision_threshold=float(decision_threshold),
        n_examples=int(np.asarray(preds).shape[0]),
        per_label=per_label,
    )


def evaluate(params: Parameters, input_ids, attention_mask, targets, vocab: LabelVocabulary | None = None,
             threshold: float = DEFAULT_DECISION_THRESHOLD) -> MetricsReport:
    """Classify, threshold the sigmoid outputs with ``>=`` and score against ``targets``."""
    if not 0.0 < threshold < 1.0:
        raise MetricsError(f"decision threshold must be in (0, 1), got {threshold}")
    if len(input_ids) == 0:
        raise MetricsError("cannot evaluate an empty dataset")
    probs = classify_batched(params, np.asarray(input_ids), np.asarray(attention_mask))
    preds = (probs >= threshold).astype(np.int64)
    names = vocab.labels if vocab is not None else None
    return metrics_report(preds, np.asarray(targets).astype(np.int64), names, threshold)


# ---------------------------------------------------------------- smoothing

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_curve(values: Sequence[float], sigma: float) -> np.ndarray:
    """Gaussian smoothing with radius ``ceil(3 sigma)`` and mirrored edges (``d c b a | a b c d``)."""
    y = np.asarray(values, dtype=np.float64)
    if y.ndim != 1 or len(y) == 0:
        raise MetricsError("smooth_curve needs a non-empty 1-d sequence")
    if not sigma > 0:
        raise MetricsError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(y, r, mode="symmetric")
    return np.convolve(padded, k, mode="valid")
