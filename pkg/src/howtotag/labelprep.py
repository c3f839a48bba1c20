"""Threshold-based label selection and binary label encoding.

A label survives selection when ``count / threshold >= 1``, where ``count``
is the number of records carrying it. Surviving labels are ordered by
descending count with lexicographic tie-breaks, which fixes the column
order of the binary label vectors.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset, Record

DEFAULT_THRESHOLD = 500


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelStats:
    counts: dict[str, int]

    def histogram(self) -> list[tuple[str, int]]:
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[str, ...]
    threshold: int = DEFAULT_THRESHOLD
    index: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise LabelError("label vocabulary contains duplicates")
        object.__setattr__(self, "index", {l: i for i, l in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def save(self, path: str | Path) -> None:
        """Plain text: a ``# threshold=N`` header then one label per line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# threshold={self.threshold}", *self.labels]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LabelVocabulary":
        threshold = DEFAULT_THRESHOLD
        labels = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# threshold="):
                threshold = int(line.split("=", 1)[1])
            elif line.strip():
                labels.append(line)
        return cls(tuple(labels), threshold)


@dataclass(frozen=True)
class PrepareResult:
    dataset: Dataset
    vocabulary: LabelVocabulary
    stats: LabelStats
    removed: int

    def report(self) -> dict:
        return {
            "records_in": len(self.dataset) + self.removed,
            "records_out": len(self.dataset),
            "records_removed": self.removed,
            "labels_total": len(self.stats.counts),
            "labels_selected": len(self.vocabulary),
            "threshold": self.vocabulary.threshold,
            "selected_labels": list(self.vocabulary.labels),
            "label_counts": dict(self.stats.histogram()),
        }


def count_labels(d: Dataset) -> LabelStats:
    if len(d) == 0:
        raise LabelError("cannot count labels of an empty dataset")
    counts: Counter[str] = Counter()
    for r in d.records:
        counts.update(r.labels)
    return LabelStats(dict(counts))


def select_labels(stats: LabelStats, threshold: int = DEFAULT_THRESHOLD) -> LabelVocabulary:
    if int(threshold) != threshold or threshold < 1:
        raise LabelError(f"threshold must be a positive integer, got {threshold}")
    selected = [l for l, c in stats.histogram() if c / threshold >= 1]
    if not selected:
        raise LabelError(f"no label reaches threshold {threshold} (max count "
                         f"{max(stats.counts.values(), default=0)})")
    return LabelVocabulary(tuple(selected), int(threshold))


def filter_record_labels(r: Record, v: LabelVocabulary) -> Record:
    return r.with_labels(l for l in r.labels if l in v)


def prepare_dataset(d: Dataset, threshold: int = DEFAULT_THRESHOLD) -> PrepareResult:
    """Count, select and relabel; records left without labels are dropped."""
    stats = count_labels(d)
    vocab = select_labels(stats, threshold)
    kept = []
    for r in d.records:
        fr = filter_record_labels(r, vocab)
        if fr.labels:
            kept.append(fr)
    if not kept:
        raise LabelError("every record lost all of its labels")
    removed = len(d) - len(kept)
    meta = dict(d.source_meta, label_threshold=vocab.threshold, records_removed=removed)
    return PrepareResult(Dataset(kept, meta), vocab, stats, removed)


def encode_labels(labels: Iterable[str], v: LabelVocabulary) -> np.ndarray:
    bits = np.zeros(len(v), dtype=np.int8)
    for l in labels:
        try:
            bits[v.index[l]] = 1
        except KeyError:
            raise LabelError(f"label {l!r} is not in the vocabulary") from None
    return bits


def decode_labels(vec: Sequence[int] | np.ndarray, v: LabelVocabulary) -> frozenset[str]:
    vec = np.asarray(vec)
    if vec.shape != (len(v),):
        raise LabelError(f"expected a vector of length {len(v)}, got shape {vec.shape}")
    if not np.isin(vec, (0, 1)).all():
        raise LabelError("label vectors may only hold 0 and 1")
    return frozenset(v.labels[i] for i in np.flatnonzero(vec))


def encode_dataset_labels(d: Dataset, v: LabelVocabulary) -> np.ndarray:
    """Stack label vectors into an ``(N, L)`` float matrix."""
    if len(d) == 0:
        return np.zeros((0, len(v)))
    return np.stack([encode_labels(r.labels, v) for r in d.records]).astype(np.float64)
