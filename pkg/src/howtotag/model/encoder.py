"""Pre-norm transformer encoder, two-stream attention and the sigmoid head.

The same layer weights serve three modes:

* bidirectional encoding (masked-LM pretraining and classification), where
  every non-pad position attends to every non-pad position;
* the content stream ``h`` of permutation-LM pretraining, where position
  ``z_t`` attends to ``z_1..z_t`` of a factorization order ``z``;
* the query stream ``g``, seeded with ``query_seed`` + position, where
  ``z_t`` attends to content states ``h`` at ``z_1..z_{t-1}`` only.

Positions are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from ..tokenizer import TokenizedInput
from . import layers as L
from .params import ModelError, Parameters


@dataclass
class ForwardOutput:
    hidden_states: np.ndarray
    probs: np.ndarray | None
    cache: Any


def as_batch(inp) -> tuple[np.ndarray, np.ndarray]:
    """Accept a TokenizedInput, a list of them, or an ``(ids, mask)`` pair."""
    if isinstance(inp, TokenizedInput):
        return inp.input_ids[None, :], inp.attention_mask[None, :]
    if isinstance(inp, (list, tuple)) and inp and isinstance(inp[0], TokenizedInput):
        return np.stack([x.input_ids for x in inp]), np.stack([x.attention_mask for x in inp])
    ids, mask = inp
    ids, mask = np.asarray(ids), np.asarray(mask)
    if ids.ndim == 1:
        ids, mask = ids[None, :], mask[None, :]
    return ids, mask


def _check_input(params: Parameters, ids: np.ndarray, mask: np.ndarray) -> None:
    cfg = params.config
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ModelError(f"ids {ids.shape} and mask {mask.shape} must be equal 2-d shapes")
    if ids.shape[1] != cfg.max_len:
        raise ModelError(f"sequence length {ids.shape[1]} != configured max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ModelError("token id out of range")


def full_attention_mask(mask: np.ndarray) -> np.ndarray:
    """Bidirectional ``(B, T, T)`` mask: every query sees every non-pad key."""
    valid = mask.astype(bool)
    return np.broadcast_to(valid[:, None, :], (mask.shape[0], mask.shape[1], mask.shape[1]))


# ---------------------------------------------------------------- layer stack

def _ffn_forward(t, pre, x):
    u, c1 = L.linear_forward(x, t[pre + "ffn.w1"], t[pre + "ffn.b1"])
    a, c2 = L.gelu_forward(u)
    y, c3 = L.linear_forward(a, t[pre + "ffn.w2"], t[pre + "ffn.b2"])
    return y, (c1, c2, c3)


def _ffn_backward(dy, cache, t, pre, grads):
    c1, c2, c3 = cache
    da = L.linear_backward(dy, c3, t[pre + "ffn.w2"], grads, pre + "ffn.w2", pre + "ffn.b2")
    du = L.gelu_backward(da, c2)
    return L.linear_backward(du, c1, t[pre + "ffn.w1"], grads, pre + "ffn.w1", pre + "ffn.b1")


def _sublayers_forward(t, pre, x, a_kv, allowed, n_heads, ln1):
    """Residual attention then residual feed-forward for one stream."""
    a, ln1_cache = ln1
    att, att_cache = L.attention_forward(t, pre + "attn.", a, a if a_kv is None else a_kv, allowed, n_heads)
    x1 = x + att
    b, ln2_cache = L.layer_norm_forward(x1, t[pre + "ln2.gain"], t[pre + "ln2.bias"])
    f, ffn_cache = _ffn_forward(t, pre, b)
    return x1 + f, (ln1_cache, att_cache, ln2_cache, ffn_cache, a_kv is None)


def _sublayers_backward(dy, cache, t, pre, grads, n_heads, extra_da=None):
    """Returns ``(dx, d_kv)``; ``d_kv`` is None for self-attention.

    ``extra_da`` is a gradient arriving at this stream's ln1 output from
    elsewhere (the query stream reading it as keys/values).
    """
    ln1_cache, att_cache, ln2_cache, ffn_cache, self_attn = cache
    db = _ffn_backward(dy, ffn_cache, t, pre, grads)
    dx1 = dy + L.layer_norm_backward(db, ln2_cache, t[pre + "ln2.gain"], grads, pre + "ln2.gain", pre + "ln2.bias")
    da_q, da_kv = L.attention_backward(dx1, att_cache, t, pre + "attn.", grads, n_heads)
    da = da_q + da_kv if self_attn else da_q
    if extra_da is not None:
        da = da + extra_da
    dx = dx1 + L.layer_norm_backward(da, ln1_cache, t[pre + "ln1.gain"], grads, pre + "ln1.gain", pre + "ln1.bias")
    return dx, (None if self_attn else da_kv)


def stack_forward(params: Parameters, h, content_allowed, g=None, query_allowed=None):
    """Run all layers and the final layer norm over one or two streams.

    Returns ``(h_out, g_out, cache)``; ``g_out`` is None in single-stream mode.
    """
    t = params.tensors
    n_heads = params.config.n_heads
    caches = []
    for i in range(params.config.n_layers):
        pre = f"layers.{i}."
        ln1_h = L.layer_norm_forward(h, t[pre + "ln1.gain"], t[pre + "ln1.bias"])
        g_cache = None
        if g is not None:
            # the query stream reads the content stream's layer input, before this layer's update
            ln1_g = L.layer_norm_forward(g, t[pre + "ln1.gain"], t[pre + "ln1.bias"])
            g, g_cache = _sublayers_forward(t, pre, g, ln1_h[0], query_allowed, n_heads, ln1_g)
        h, h_cache = _sublayers_forward(t, pre, h, None, content_allowed, n_heads, ln1_h)
        caches.append((h_cache, g_cache))
    h_out, hf_cache = L.layer_norm_forward(h, t["ln_f.gain"], t["ln_f.bias"])
    g_out, gf_cache = (None, None)
    if g is not None:
        g_out, gf_cache = L.layer_norm_forward(g, t["ln_f.gain"], t["ln_f.bias"])
    return h_out, g_out, (caches, hf_cache, gf_cache)


def stack_backward(params: Parameters, cache, dh_out, dg_out, grads):
    """Backpropagate through the stack; returns ``(dh0, dg0)``."""
    t = params.tensors
    n_heads = params.config.n_heads
    caches, hf_cache, gf_cache = cache
    dh = np.zeros_like(hf_cache[0]) if dh_out is None else \
        L.layer_norm_backward(dh_out, hf_cache, t["ln_f.gain"], grads, "ln_f.gain", "ln_f.bias")
    dg = None
    if gf_cache is not None:
        dg = np.zeros_like(gf_cache[0]) if dg_out is None else \
            L.layer_norm_backward(dg_out, gf_cache, t["ln_f.gain"], grads, "ln_f.gain", "ln_f.bias")
    for i in reversed(range(params.config.n_layers)):
        pre = f"layers.{i}."
        h_cache, g_cache = caches[i]
        da_h_from_g = None
        if g_cache is not None:
            dg, da_h_from_g = _sublayers_backward(dg, g_cache, t, pre, grads, n_heads)
        dh, _ = _sublayers_backward(dh, h_cache, t, pre, grads, n_heads, extra_da=da_h_from_g)
    return dh, dg


# ---------------------------------------------------------------- embeddings

def embed(params: Parameters, ids: np.ndarray) -> np.ndarray:
    t = params.tensors
    return t["tok_emb"][ids] + t["pos_emb"][None, : ids.shape[1]]


def embed_backward(dx, ids, grads):
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][: ids.shape[1]] += dx.sum(axis=0)


def query_seed_states(params: Parameters, batch: int, length: int) -> np.ndarray:
    t = params.tensors
    return np.broadcast_to(t["query_seed"] + t["pos_emb"][:length], (batch, length, params.config.d_model)).copy()


def query_seed_backward(dg, grads):
    grads["query_seed"] += dg.sum(axis=(0, 1))
    grads["pos_emb"][: dg.shape[1]] += dg.sum(axis=0)


# ---------------------------------------------------------------- public passes

def forward_encoder(params: Parameters, inp) -> ForwardOutput:
    """Bidirectional encoding; pad keys are excluded from every attention row."""
    ids, mask = as_batch(inp)
    _check_input(params, ids, mask)
    x0 = embed(params, ids)
    h, _, cache = stack_forward(params, x0, full_attention_mask(mask))
    return ForwardOutput(h, None, (ids, mask, cache))


def encoder_backward(params: Parameters, out: ForwardOutput, dhidden, grads) -> None:
    ids, _, cache = out.cache
    dx0, _ = stack_backward(params, cache, dhidden, None, grads)
    embed_backward(dx0, ids, grads)


def attention_masks_for_order(z: Sequence[int], T: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Content and query masks for a factorization order over positions ``0..T-1``.

    ``content[i, j] = 1`` iff ``j`` comes no later than ``i`` in ``z``;
    ``query[i, j] = 1`` iff ``j`` comes strictly earlier.
    """
    z = np.asarray(z, dtype=np.int64)
    T = len(z) if T is None else T
    if len(z) != T or not np.array_equal(np.sort(z), np.arange(T)):
        raise ModelError(f"{z.tolist()} is not a permutation of 0..{T - 1}")
    rank = np.empty(T, dtype=np.int64)
    rank[z] = np.arange(T)
    content = (rank[None, :] <= rank[:, None]).astype(np.int8)
    query = (rank[None, :] < rank[:, None]).astype(np.int8)
    return content, query


def batch_order_masks(mask: np.ndarray, orders: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """``(B, M, M)`` boolean masks; rows and columns of pad positions stay closed."""
    B, M = mask.shape
    content = np.zeros((B, M, M), dtype=bool)
    query = np.zeros((B, M, M), dtype=bool)
    lengths = mask.sum(axis=1)
    if len(orders) != B:
        raise ModelError(f"got {len(orders)} orders for a batch of {B}")
    for b, z in enumerate(orders):
        T = int(lengths[b])
        if not mask[b, :T].all():
            raise ModelError("attention masks must be left-aligned (non-pad prefix)")
        c, q = attention_masks_for_order(z, T)
        content[b, :T, :T] = c
        query[b, :T, :T] = q
    return content, query


def forward_two_stream(params: Parameters, inp, orders):
    """Returns ``(h_states, g_states, cache)`` for one order per sequence."""
    ids, mask = as_batch(inp)
    _check_input(params, ids, mask)
    if len(orders) and np.ndim(orders[0]) == 0:
        orders = [orders]
    content, query = batch_order_masks(mask, orders)
    h0 = embed(params, ids)
    g0 = query_seed_states(params, ids.shape[0], ids.shape[1])
    h, g, cache = stack_forward(params, h0, content, g0, query)
    return h, g, (ids, mask, cache)


def two_stream_backward(params: Parameters, cache, dh, dg, grads) -> None:
    ids, _, stack_cache = cache
    dh0, dg0 = stack_backward(params, stack_cache, dh, dg, grads)
    embed_backward(dh0, ids, grads)
    query_seed_backward(dg0, grads)


# ---------------------------------------------------------------- classification

def pool_indices(mask: np.ndarray, mode: str) -> np.ndarray | None:
    if mode == "first_token":
        return np.zeros(mask.shape[0], dtype=np.int64)
    if mode == "last_token":
        return np.maximum(mask.sum(axis=1).astype(np.int64) - 1, 0)
    return None


def pool_forward(hidden, mask, mode):
    idx = pool_indices(mask, mode)
    if idx is not None:
        return hidden[np.arange(hidden.shape[0]), idx]
    w = mask.astype(np.float64)
    return (hidden * w[:, :, None]).sum(axis=1) / np.maximum(w.sum(axis=1, keepdims=True), 1.0)


def pool_backward(dpooled, hidden_shape, mask, mode):
    dh = np.zeros(hidden_shape)
    idx = pool_indices(mask, mode)
    if idx is not None:
        dh[np.arange(hidden_shape[0]), idx] = dpooled
        return dh
    w = mask.astype(np.float64)
    w = w / np.maximum(w.sum(axis=1, keepdims=True), 1.0)
    return w[:, :, None] * dpooled[:, None, :]


def classify_forward(params: Parameters, inp) -> ForwardOutput:
    enc = forward_encoder(params, inp)
    ids, mask, _ = enc.cache
    pooled = pool_forward(enc.hidden_states, mask, params.config.pooling)
    logits = pooled @ params["head.weight"] + params["head.bias"]
    probs = L.sigmoid(logits)
    return ForwardOutput(enc.hidden_states, probs, (enc, pooled))


def classify_backward(params: Parameters, out: ForwardOutput, dprobs: np.ndarray, grads=None):
    """Gradient of a scalar loss given its gradient with respect to ``probs``."""
    grads = params.zeros_like() if grads is None else grads
    enc, pooled = out.cache
    _, mask, _ = enc.cache
    p = out.probs
    dlogits = dprobs * p * (1.0 - p)
    grads["head.weight"] += pooled.T @ dlogits
    grads["head.bias"] += dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.weight"].T
    dhidden = pool_backward(dpooled, enc.hidden_states.shape, mask, params.config.pooling)
    encoder_backward(params, enc, dhidden, grads)
    return grads


def classify(params: Parameters, inp) -> np.ndarray:
    """Per-label sigmoid probabilities, shape ``(B, L)`` (or ``(L,)`` for one input)."""
    probs = classify_forward(params, inp).probs
    return probs[0] if isinstance(inp, TokenizedInput) else probs


def classify_batched(params: Parameters, ids: np.ndarray, mask: np.ndarray, batch_size: int = 64) -> np.ndarray:
    if len(ids) == 0:
        return np.zeros((0, params.config.num_labels))
    return np.concatenate([classify_forward(params, (ids[i:i + batch_size], mask[i:i + batch_size])).probs
                           for i in range(0, len(ids), batch_size)])
