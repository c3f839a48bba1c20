"""Glue from raw records to model-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Dataset
from .labelprep import LabelVocabulary, PrepareResult, encode_dataset_labels, prepare_dataset
from .textprep import PreprocessConfig, preprocess
from .tokenizer import Vocab, encode_batch
from .train import EncodedData


@dataclass(frozen=True)
class PreprocessResult:
    dataset: Dataset
    empty_text_removed: int


def preprocess_dataset(d: Dataset, cfg: PreprocessConfig) -> PreprocessResult:
    """Apply text preprocessing to every record; records left with no text are dropped."""
    kept = []
    for r in d.records:
        text = preprocess(r.text, cfg)
        if text.strip():
            kept.append(r.with_text(text))
    meta = dict(d.source_meta, preprocess=cfg.to_dict())
    return PreprocessResult(Dataset(kept, meta), len(d) - len(kept))


def prepare(d: Dataset, preprocess_cfg: PreprocessConfig, threshold: int) -> tuple[PrepareResult, int]:
    """Preprocess text, then select labels and relabel.

    Returns the label-preparation result and the number of records dropped
    for having no text left after preprocessing.
    """
    pre = preprocess_dataset(d, preprocess_cfg)
    return prepare_dataset(pre.dataset, threshold), pre.empty_text_removed


def encode_records(d: Dataset, tokens: Vocab, labels: LabelVocabulary, max_len: int) -> EncodedData:
    ids, mask = encode_batch([r.text for r in d.records], tokens, max_len)
    return EncodedData(ids, mask, encode_dataset_labels(d, labels))
