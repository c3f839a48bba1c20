"""Loading, saving and splitting multi-label instruction datasets.

Two interchange formats are supported:

* ``jsonl``: one object per line with fields ``id``, ``text`` and ``labels``
  (a list of strings).
* ``csv``: columns ``id``, ``text``, ``labels`` where ``labels`` is a single
  ``|``-delimited cell.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

LABEL_DELIMITER = "|"
FORMATS = ("jsonl", "csv")


class DatasetError(ValueError):
    """Raised for unreadable or invalid dataset files and arguments."""


@dataclass(frozen=True)
class Record:
    id: str
    text: str
    labels: frozenset[str]

    def with_labels(self, labels: Iterable[str]) -> "Record":
        return Record(self.id, self.text, frozenset(labels))

    def with_text(self, text: str) -> "Record":
        return Record(self.id, text, self.labels)


@dataclass
class Dataset:
    records: list[Record]
    source_meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DatasetError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise DatasetError("seed must be non-negative")


def _make_record(row: dict, lineno: int, require_labels: bool = True) -> Record:
    for key in ("id", "text", "labels"):
        if key not in row:
            raise DatasetError(f"row {lineno}: missing field {key!r}")
    labels = row["labels"]
    if isinstance(labels, str):
        labels = [s for s in (part.strip() for part in labels.split(LABEL_DELIMITER)) if s]
    if not isinstance(labels, (list, tuple)) or not all(isinstance(l, str) for l in labels):
        raise DatasetError(f"row {lineno}: labels must be a list of strings")
    text = row["text"]
    if not isinstance(text, str) or not text.strip():
        raise DatasetError(f"row {lineno}: text is empty")
    if require_labels and not labels:
        raise DatasetError(f"row {lineno}: empty label list")
    return Record(str(row["id"]), text, frozenset(labels))


def _check_unique(records: list[Record]) -> None:
    seen: set[str] = set()
    for i, r in enumerate(records, start=1):
        if r.id in seen:
            raise DatasetError(f"row {i}: duplicate id {r.id!r}")
        seen.add(r.id)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in FORMATS:
        raise DatasetError(f"unsupported format {fmt!r}; expected one of {FORMATS}")
    return fmt


def load_dataset(path: str | Path, format: str | None = None, *, allow_empty_labels: bool = False) -> Dataset:
    """Read a dataset file, preserving row order.

    Duplicate labels within a row collapse to a set. ``allow_empty_labels``
    is only meant for re-reading files this package wrote itself.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")

    records: list[Record] = []
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"row {lineno}: malformed json ({exc.msg})") from None
                if not isinstance(row, dict):
                    raise DatasetError(f"row {lineno}: expected a json object")
                records.append(_make_record(row, lineno, not allow_empty_labels))
        else:
            reader = csv.DictReader(fh)
            missing = {"id", "text", "labels"} - set(reader.fieldnames or [])
            if missing:
                raise DatasetError(f"csv header missing columns {sorted(missing)}")
            # header is line 1
            for lineno, row in enumerate(reader, start=2):
                if None in row or any(v is None for v in row.values()):
                    raise DatasetError(f"row {lineno}: wrong number of columns")
                records.append(_make_record(row, lineno, not allow_empty_labels))

    _check_unique(records)
    return Dataset(records, {"path": str(path), "format": fmt})


def _sorted_labels(labels: Iterable[str]) -> list[str]:
    return sorted(labels)


def save_dataset(d: Dataset, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for r in d.records:
                row = {"id": r.id, "text": r.text, "labels": _sorted_labels(r.labels)}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        else:
            writer = csv.writer(fh)
            writer.writerow(["id", "text", "labels"])
            for r in d.records:
                if any(LABEL_DELIMITER in l for l in r.labels):
                    raise DatasetError(f"label in record {r.id!r} contains {LABEL_DELIMITER!r}")
                writer.writerow([r.id, r.text, LABEL_DELIMITER.join(_sorted_labels(r.labels))])


def split_dataset(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Uniform random train/test partition by record.

    The train side gets ``round(train_fraction * N)`` records. Both halves
    keep the original relative order of their records.
    """
    n = len(d)
    if n < 2:
        raise DatasetError("need at least 2 records to split")
    n_train = int(round(spec.train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DatasetError(f"train_fraction {spec.train_fraction} leaves one side empty for N={n}")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    meta = dict(d.source_meta, split_seed=spec.seed, train_fraction=spec.train_fraction)
    train = Dataset([d.records[i] for i in train_idx], dict(meta, side="train"))
    test = Dataset([d.records[i] for i in test_idx], dict(meta, side="test"))
    return train, test
