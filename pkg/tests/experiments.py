"""Small end-to-end experiments shared by the unit and acceptance tests.

Each runner is cached so that the expensive fits happen once per session.
"""

from __future__ import annotations

import time
from functools import lru_cache

import numpy as np

from howtotag.corpus import Dataset, SplitSpec, split_dataset
from howtotag.labelprep import count_labels, select_labels
from howtotag.model import ModelConfig
from howtotag.pipeline import encode_records, prepare
from howtotag.synthetic import synthetic_corpus
from howtotag.textprep import PreprocessConfig
from howtotag.tokenizer import build_vocab
from howtotag.train import TrainConfig, fit
from howtotag.metrics import evaluate

OVERFIT_MAX_LEN = 32


def overfit_data():
    d = synthetic_corpus(64, n_labels=8, seed=7)
    res, _ = prepare(d, PreprocessConfig(), 1)
    tokens = build_vocab([r.text for r in res.dataset])
    data = encode_records(res.dataset, tokens, res.vocabulary, OVERFIT_MAX_LEN)
    cfg = ModelConfig(vocab_size=len(tokens), num_labels=len(res.vocabulary), max_len=OVERFIT_MAX_LEN,
                      d_model=32, n_heads=2, n_layers=2, d_ff=64)
    return data, cfg


@lru_cache(maxsize=None)
def overfit_run(epochs: int = 300):
    data, cfg = overfit_data()
    tc = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=epochs, max_len=OVERFIT_MAX_LEN, seed=0)
    start = time.perf_counter()
    result = fit(data, None, cfg, tc)
    return data, cfg, result, time.perf_counter() - start


def restrict_to_top_labels(d: Dataset, k: int) -> Dataset:
    top = select_labels(count_labels(d), 1).labels[:k]
    kept = [r.with_labels(r.labels & set(top)) for r in d.records]
    return Dataset([r for r in kept if r.labels], d.source_meta)


def prior_baseline_micro_f1(train_targets, test_targets, draws: int = 200, seed: int = 0) -> float:
    """Expected micro F1 of predicting each label independently with its train prevalence."""
    prior = train_targets.mean(axis=0)
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(draws):
        pred = rng.random(test_targets.shape) < prior
        tp = np.sum(pred & (test_targets == 1))
        fp = np.sum(pred & (test_targets == 0))
        fn = np.sum(~pred & (test_targets == 1))
        scores.append(tp / (tp + 0.5 * (fp + fn)))
    return float(np.mean(scores))


@lru_cache(maxsize=None)
def generalization_run():
    raw = synthetic_corpus(1500, n_labels=20, seed=11)
    res, _ = prepare(raw, PreprocessConfig(), 1)
    full = restrict_to_top_labels(res.dataset, 10)
    d = Dataset(full.records[:1000], full.source_meta)
    train, test = split_dataset(d, SplitSpec(0.8, seed=0))
    labels = select_labels(count_labels(train), 1)
    tokens = build_vocab([r.text for r in train])
    max_len = 48
    d_train = encode_records(train, tokens, labels, max_len)
    d_test = encode_records(test, tokens, labels, max_len)
    cfg = ModelConfig(vocab_size=len(tokens), num_labels=len(labels), max_len=max_len,
                      d_model=32, n_heads=2, n_layers=2, d_ff=64)
    tc = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=15, max_len=max_len, seed=0)
    start = time.perf_counter()
    # model selection on a slice of the training split keeps the test split untouched
    n_val = len(d_train) // 8
    result = fit(d_train.subset(slice(n_val, None)), d_train.subset(slice(0, n_val)), cfg, tc)
    report = evaluate(result.params, d_test.input_ids, d_test.attention_mask, d_test.targets, labels)
    baseline = prior_baseline_micro_f1(d_train.targets.astype(int), d_test.targets.astype(int))
    return report, baseline, time.perf_counter() - start, (len(train), len(test), len(labels))
