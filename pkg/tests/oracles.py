"""Independent brute-force references used by the unit and acceptance tests.

None of these import the code paths they check.
"""

from __future__ import annotations

import json
from collections import Counter

import numpy as np


# ---------------------------------------------------------------- label preparation

def naive_prepare(rows, threshold):
    """Literal loop version of threshold label selection and relabeling.

    ``rows`` is a list of ``(id, text, labels)``. Returns ``(selected_set,
    survivors)`` where survivors keep input order and hold label sets.
    """
    unique = []
    for _, _, labels in rows:
        for label in labels:
            if label not in unique:
                unique.append(label)
    selected = []
    for y in unique:
        total = 0
        for _, _, labels in rows:
            if y in labels:
                total += 1
        if total / threshold >= 1:
            selected.append(y)
    survivors = []
    for rid, text, labels in rows:
        kept = set()
        for label in labels:
            if label in selected:
                kept.add(label)
        if kept:
            survivors.append((rid, text, kept))
    return set(selected), survivors


def raw_label_histogram(path):
    """Second-pass count straight from the jsonl text, with per-row set semantics."""
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            for label in set(json.loads(line)["labels"]):
                counts[label] = counts.get(label, 0) + 1
    return counts


# ---------------------------------------------------------------- metrics

def slot_counts(preds, targets):
    """Per-label (tp, fp, tn, fn) lists by visiting every slot."""
    n_labels = len(preds[0])
    tp, fp, tn, fn = [0] * n_labels, [0] * n_labels, [0] * n_labels, [0] * n_labels
    for j, (pcol, tcol) in enumerate(zip(zip(*preds), zip(*targets))):
        c = Counter(zip(pcol, tcol))
        tp[j], fp[j], tn[j], fn[j] = c[(1, 1)], c[(1, 0)], c[(0, 0)], c[(0, 1)]
    return tp, fp, tn, fn


def brute_metrics(preds, targets):
    tp, fp, tn, fn = slot_counts(preds, targets)
    L = len(tp)
    TP, FP, TN, FN = sum(tp), sum(fp), sum(tn), sum(fn)
    prec = [tp[j] / (tp[j] + fp[j]) if tp[j] + fp[j] else 0.0 for j in range(L)]
    rec = [tp[j] / (tp[j] + fn[j]) if tp[j] + fn[j] else 0.0 for j in range(L)]
    p_ma = sum(prec) / L
    r_ma = sum(rec) / L
    return {
        "counts": (tp, fp, tn, fn),
        "accuracy": (TN + TP) / (TN + TP + FN + FP),
        "macro_precision": p_ma,
        "macro_recall": r_ma,
        "macro_f1": 2 * p_ma * r_ma / (p_ma + r_ma) if p_ma + r_ma else 0.0,
        "micro_f1": TP / (TP + 0.5 * (FP + FN)) if TP + FP + FN else 0.0,
    }


def flattened_f1(preds, targets):
    """Plain single-label F1 over all slots, as a scikit-style binary scorer would compute it."""
    tp = fp = fn = 0
    for prow, trow in zip(preds, targets):
        for p, t in zip(prow, trow):
            tp += p and t
            fp += p and not t
            fn += t and not p
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


# ---------------------------------------------------------------- finite differences

def finite_difference_check(loss_fn, tensors, grads, n_top=6, n_random=6, eps=1e-5, seed=0, floor=1e-5):
    """Relative error between analytic and central-difference gradients.

    For every tensor, probes the ``n_top`` largest-magnitude analytic entries
    plus ``n_random`` uniformly drawn ones. Returns ``{name: rel_err}`` with
    ``rel_err = |a - n| / max(|a|, |n|, floor)`` over the probed entries,
    plus the pooled error under key ``"__all__"``.
    """
    rng = np.random.default_rng(seed)
    errors, all_a, all_n = {}, [], []
    for name, t in tensors.items():
        g = grads[name]
        flat = np.abs(g).ravel()
        top = np.argsort(-flat, kind="stable")[: min(n_top, flat.size)]
        rnd = rng.choice(flat.size, size=min(n_random, flat.size), replace=False)
        picks = np.unique(np.concatenate([top, rnd]))
        a, n = [], []
        for flat_idx in picks:
            idx = np.unravel_index(flat_idx, t.shape)
            old = t[idx]
            t[idx] = old + eps
            up = loss_fn()
            t[idx] = old - eps
            down = loss_fn()
            t[idx] = old
            a.append(g[idx])
            n.append((up - down) / (2 * eps))
        a, n = np.asarray(a), np.asarray(n)
        errors[name] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))
        all_a.append(a)
        all_n.append(n)
    a, n = np.concatenate(all_a), np.concatenate(all_n)
    errors["__all__"] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))
    return errors
