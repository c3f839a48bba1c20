"""Pretraining objectives: masked-LM and permutation-LM.

Both score tokens with the tied output embedding,
``logits = hidden @ tok_emb.T + lm_bias``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..tokenizer import CLS, MASK, SEP
from . import layers as L
from .encoder import as_batch, encoder_backward, forward_encoder, forward_two_stream, two_stream_backward
from .params import ModelError, Parameters


def lm_head_loss(params: Parameters, hidden_sel: np.ndarray, targets: np.ndarray,
                 weights: np.ndarray, grads: dict) -> tuple[float, np.ndarray]:
    """Weighted NLL of ``targets`` under the tied LM head.

    ``hidden_sel`` is ``(K, d)``; returns ``(loss, d_hidden_sel)`` and adds
    head gradients into ``grads``.
    """
    emb = params["tok_emb"]
    logits = hidden_sel @ emb.T + params["lm_bias"]
    logp = L.log_softmax(logits)
    k = np.arange(len(targets))
    loss = float(-(weights * logp[k, targets]).sum())
    dlogits = np.exp(logp)
    dlogits[k, targets] -= 1.0
    dlogits *= weights[:, None]
    grads["tok_emb"] += dlogits.T @ hidden_sel
    grads["lm_bias"] += dlogits.sum(axis=0)
    return loss, dlogits @ emb


# ---------------------------------------------------------------- masked LM

def maskable_positions(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Non-pad positions that do not hold [CLS] or [SEP]."""
    return mask.astype(bool) & (ids != CLS) & (ids != SEP)


def choose_mask_positions(ids: np.ndarray, mask: np.ndarray, mask_rate: float = 0.15,
                          seed: int = 0) -> np.ndarray:
    """Boolean ``(B, M)`` selection of ``max(1, round(rate * n))`` maskable slots per sequence."""
    if not 0.0 < mask_rate < 1.0:
        raise ModelError(f"mask_rate must be in (0, 1), got {mask_rate}")
    ids, mask = as_batch((ids, mask))
    cand = maskable_positions(ids, mask)
    rng = np.random.default_rng(seed)
    chosen = np.zeros_like(cand)
    for b in range(ids.shape[0]):
        pos = np.flatnonzero(cand[b])
        if len(pos) == 0:
            raise ModelError(f"sequence {b} has no maskable tokens")
        k = max(1, int(math.floor(mask_rate * len(pos) + 0.5)))
        chosen[b, rng.choice(pos, size=k, replace=False)] = True
    return chosen


def mlm_loss(params: Parameters, batch, mask_rate: float = 0.15, seed: int = 0,
             positions: np.ndarray | None = None) -> tuple[float, dict]:
    """Mean NLL of the original ids at masked positions, with analytic gradients."""
    ids, mask = as_batch(batch)
    chosen = choose_mask_positions(ids, mask, mask_rate, seed) if positions is None else positions
    corrupted = np.where(chosen, MASK, ids)
    out = forward_encoder(params, (corrupted, mask))
    b_idx, t_idx = np.nonzero(chosen)
    grads = params.zeros_like()
    weights = np.full(len(b_idx), 1.0 / len(b_idx))
    loss, dsel = lm_head_loss(params, out.hidden_states[b_idx, t_idx], ids[b_idx, t_idx], weights, grads)
    dhidden = np.zeros_like(out.hidden_states)
    np.add.at(dhidden, (b_idx, t_idx), dsel)
    encoder_backward(params, out, dhidden, grads)
    return loss, grads


# ---------------------------------------------------------------- permutation LM

def sample_factorization_orders(T: int, n: int = 1, seed: int = 0) -> list[np.ndarray]:
    if T < 1 or n < 1:
        raise ModelError("T and n must be positive")
    rng = np.random.default_rng(seed)
    return [rng.permutation(T) for _ in range(n)]


def _expand_orders(ids, mask, orders):
    """One row per (sequence, order) pair."""
    rows, row_orders = [], []
    for b, o in enumerate(orders):
        group = [o] if np.ndim(o) == 1 else list(o)
        if not group:
            raise ModelError(f"sequence {b} has no factorization order")
        for z in group:
            rows.append(b)
            row_orders.append(np.asarray(z, dtype=np.int64))
    rows = np.asarray(rows)
    return ids[rows], mask[rows], row_orders


def prediction_targets(z: np.ndarray, predict_fraction: float) -> np.ndarray:
    """Positions predicted for order ``z``: its last ``ceil(fraction * T)`` entries."""
    if not 0.0 < predict_fraction <= 1.0:
        raise ModelError(f"predict_fraction must be in (0, 1], got {predict_fraction}")
    k = math.ceil(predict_fraction * len(z))
    if k == 0:
        raise ModelError("empty prediction set")
    return z[len(z) - k:]


def plm_loss(params: Parameters, batch, orders: Sequence, predict_fraction: float = 1.0) -> tuple[float, dict]:
    """Permutation-LM loss averaged over (sequence, order) pairs.

    ``orders[b]`` is one permutation of ``0..T_b-1`` or a list of them.
    For each pair the loss is the mean NLL of ``x[z_t]`` predicted from
    the query stream at ``z_t`` over the predicted tail of ``z``.
    """
    ids, mask = as_batch(batch)
    if len(orders) != ids.shape[0]:
        raise ModelError(f"got {len(orders)} order groups for {ids.shape[0]} sequences")
    ids, mask, row_orders = _expand_orders(ids, mask, orders)
    h, g, cache = forward_two_stream(params, (ids, mask), row_orders)
    b_idx, t_idx, w = [], [], []
    for r, z in enumerate(row_orders):
        tgt = prediction_targets(z, predict_fraction)
        b_idx.extend([r] * len(tgt))
        t_idx.extend(tgt.tolist())
        w.extend([1.0 / (len(tgt) * len(row_orders))] * len(tgt))
    b_idx, t_idx, w = np.asarray(b_idx), np.asarray(t_idx), np.asarray(w)
    grads = params.zeros_like()
    loss, dsel = lm_head_loss(params, g[b_idx, t_idx], ids[b_idx, t_idx], w, grads)
    dg = np.zeros_like(g)
    np.add.at(dg, (b_idx, t_idx), dsel)
    two_stream_backward(params, cache, None, dg, grads)
    return loss, grads


# ---------------------------------------------------------------- sequential reference

def _ln(x, gain, bias):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / np.sqrt(var + L.LN_EPS) * gain + bias


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _attend(t, pre, q_in, kv_rows, n_heads):
    """One query vector against a list of key/value input vectors."""
    d = q_in.shape[0]
    dh = d // n_heads
    q = q_in @ t[pre + "wq"] + t[pre + "bq"]
    out = np.zeros(d)
    if len(kv_rows):
        kv = np.stack(kv_rows)
        k = kv @ t[pre + "wk"] + t[pre + "bk"]
        v = kv @ t[pre + "wv"] + t[pre + "bv"]
        for hd in range(n_heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            s = k[:, sl] @ q[sl] / np.sqrt(dh)
            a = np.exp(s - s.max())
            out[sl] = (a / a.sum()) @ v[:, sl]
    return out @ t[pre + "wo"] + t[pre + "bo"]


def _block(t, pre, x, kv_normed, n_heads):
    a = _ln(x, t[pre + "ln1.gain"], t[pre + "ln1.bias"])
    x = x + _attend(t, pre + "attn.", a, kv_normed, n_heads)
    b = _ln(x, t[pre + "ln2.gain"], t[pre + "ln2.bias"])
    return x + _gelu(b @ t[pre + "ffn.w1"] + t[pre + "ffn.b1"]) @ t[pre + "ffn.w2"] + t[pre + "ffn.b2"]


def sequential_ar_nll(params: Parameters, ids: Sequence[int]) -> float:
    """Left-to-right ``-(1/T) sum_t log p(x_t | x_<t)`` for one unpadded sequence.

    Computed position by position from prefixes, without mask matrices:
    the content state of position ``i`` is built from positions ``<= i``
    and the prediction for ``x_t`` uses the query seed at position ``t``
    attending to content states of positions ``< t``. It serves as an
    independent check on the permutation-LM path with the identity order.
    """
    t = params.tensors
    cfg = params.config
    ids = list(ids)
    T = len(ids)
    h = [t["tok_emb"][x] + t["pos_emb"][i] for i, x in enumerate(ids)]
    g = [t["query_seed"] + t["pos_emb"][i] for i in range(T)]
    for layer in range(cfg.n_layers):
        pre = f"layers.{layer}."
        normed = [_ln(x, t[pre + "ln1.gain"], t[pre + "ln1.bias"]) for x in h]
        g = [_block(t, pre, g[i], normed[:i], cfg.n_heads) for i in range(T)]
        h = [_block(t, pre, h[i], normed[: i + 1], cfg.n_heads) for i in range(T)]
    nll = 0.0
    for i in range(T):
        out = _ln(g[i], t["ln_f.gain"], t["ln_f.bias"])
        logits = t["tok_emb"] @ out + t["lm_bias"]
        m = logits.max()
        nll -= logits[ids[i]] - m - np.log(np.exp(logits - m).sum())
    return float(nll / T)
