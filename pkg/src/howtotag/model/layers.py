"""Forward/backward primitives on batched float64 arrays.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache, adds parameter gradients into a
``grads`` dict in place and returns the input gradient(s).
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w, grads, wname, bname):
    d_in, d_out = w.shape
    grads[wname] += x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    grads[bname] += dy.reshape(-1, d_out).sum(axis=0)
    return dy @ w.T


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, cache, gain, grads, gname, bname):
    xhat, inv = cache
    d = xhat.shape[-1]
    grads[gname] += (dy * xhat).reshape(-1, d).sum(axis=0)
    grads[bname] += dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                  - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def gelu_forward(x):
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def masked_softmax(scores, allowed):
    """Softmax over the last axis restricted to ``allowed`` keys.

    Rows with no allowed key come out as all zeros rather than NaN.
    """
    s = np.where(allowed, scores, -np.inf)
    row_max = s.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(s - row_max)
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.where(denom > 0, denom, 1.0)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention_forward(tensors, prefix, xq, xkv, allowed, n_heads):
    """Multi-head attention with queries from ``xq`` and keys/values from ``xkv``.

    ``allowed`` is a boolean ``(B, Tq, Tk)`` array; ``allowed[b, i, j]``
    lets query ``i`` see key ``j``.
    """
    wq, bq = tensors[prefix + "wq"], tensors[prefix + "bq"]
    wk, bk = tensors[prefix + "wk"], tensors[prefix + "bk"]
    wv, bv = tensors[prefix + "wv"], tensors[prefix + "bv"]
    wo, bo = tensors[prefix + "wo"], tensors[prefix + "bo"]
    q = _split_heads(xq @ wq + bq, n_heads)
    k = _split_heads(xkv @ wk + bk, n_heads)
    v = _split_heads(xkv @ wv + bv, n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    probs = masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, allowed[:, None, :, :])
    ctx = _merge_heads(probs @ v)
    out = ctx @ wo + bo
    return out, (xq, xkv, q, k, v, probs, ctx, scale)


def attention_backward(dout, cache, tensors, prefix, grads, n_heads):
    """Returns ``(d_xq, d_xkv)``."""
    xq, xkv, q, k, v, probs, ctx, scale = cache
    dctx = linear_backward(dout, ctx, tensors[prefix + "wo"], grads, prefix + "wo", prefix + "bo")
    dctx = _split_heads(dctx, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dxq = linear_backward(_merge_heads(dq), xq, tensors[prefix + "wq"], grads, prefix + "wq", prefix + "bq")
    dxkv = linear_backward(_merge_heads(dk), xkv, tensors[prefix + "wk"], grads, prefix + "wk", prefix + "bk")
    dxkv = dxkv + linear_backward(_merge_heads(dv), xkv, tensors[prefix + "wv"], grads,
                                  prefix + "wv", prefix + "bv")
    return dxq, dxkv


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
