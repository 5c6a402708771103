"""Forward/backward pairs for the transformer building blocks.

Each ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache, accumulates parameter gradients into
``grads`` (keyed like ``params``) and returns the input gradient.
"""

from __future__ import annotations

import math

import numpy as np

from colactc.prng import Rng

NEG_INF = -1e9
LN_EPS = 1e-5


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def linear_fwd(x, params, name):
    W = params[name + ".w"]
    y = _flat(x) @ W
    b = params.get(name + ".b")
    if b is not None:
        y += b
    return y.reshape(x.shape[:-1] + (W.shape[1],)), x


def linear_bwd(dy, x, params, grads, name):
    W = params[name + ".w"]
    dyf = _flat(dy)
    grads[name + ".w"] += _flat(x).T @ dyf
    if name + ".b" in grads:
        grads[name + ".b"] += dyf.sum(axis=0)
    return (dyf @ W.T).reshape(dy.shape[:-1] + (W.shape[0],))


def layer_norm_fwd(x, params, name):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * params[name + ".g"] + params[name + ".b"], (xhat, inv)


def layer_norm_bwd(dy, cache, params, grads, name):
    xhat, inv = cache
    grads[name + ".g"] += _flat(dy * xhat).sum(axis=0)
    grads[name + ".b"] += _flat(dy).sum(axis=0)
    dxhat = dy * params[name + ".g"]
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def dropout_fwd(x, p: float, rng: Rng | None):
    if rng is None or p <= 0.0:
        return x, None
    keep = rng.bits16(x.size) >= int(round(p * 65536))
    mask = keep.reshape(x.shape).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return x * mask, mask


def dropout_bwd(dy, mask):
    return dy if mask is None else dy * mask


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    y = x - x.max(axis=axis, keepdims=True)
    return y - np.log(np.exp(y).sum(axis=axis, keepdims=True))


def _split_heads(x, h):
    B, T, d = x.shape
    return x.reshape(B, T, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def attention_fwd(xq, xkv, mask, params, name, n_heads, self_attn: bool):
    """Multi-head attention; ``mask`` broadcasts to ``B x 1 x Tq x Tk`` (True = attend).

    Self-attention uses one fused ``qkv`` projection, cross-attention a ``q``
    and a fused ``kv`` projection.
    """
    d = xq.shape[-1]
    if self_attn:
        qkv, _ = linear_fwd(xq, params, name + ".qkv")
        q, k, v = qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]
    else:
        q, _ = linear_fwd(xq, params, name + ".q")
        kv, _ = linear_fwd(xkv, params, name + ".kv")
        k, v = kv[..., :d], kv[..., d:]
    q, k, v = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(mask, scores, NEG_INF)
    att = softmax(scores)
    ctx = _merge_heads(att @ v)
    out, _ = linear_fwd(ctx, params, name + ".o")
    return out, (xq, xkv, q, k, v, att, ctx, scale, self_attn)


def attention_bwd(dout, cache, params, grads, name, n_heads):
    """Returns ``(dxq, dxkv)``; for self-attention ``dxkv`` is already folded into ``dxq``."""
    xq, xkv, q, k, v, att, ctx, scale, self_attn = cache
    dctx = linear_bwd(dout, ctx, params, grads, name + ".o")
    dctx = _split_heads(dctx, n_heads)
    datt = dctx @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ dctx
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
    dq = _merge_heads(ds @ k)
    dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    if self_attn:
        dqkv = np.concatenate([dq, dk, dv], axis=-1)
        return linear_bwd(dqkv, xq, params, grads, name + ".qkv"), None
    dxq = linear_bwd(dq, xq, params, grads, name + ".q")
    dxkv = linear_bwd(np.concatenate([dk, dv], axis=-1), xkv, params, grads, name + ".kv")
    return dxq, dxkv


def ffn_fwd(x, params, name, p_drop, rng):
    h, _ = linear_fwd(x, params, name + ".fc1")
    pre = h
    h = np.maximum(h, 0.0)
    h, mask = dropout_fwd(h, p_drop, rng)
    y, _ = linear_fwd(h, params, name + ".fc2")
    return y, (x, pre, h, mask)


def ffn_bwd(dy, cache, params, grads, name):
    x, pre, h, mask = cache
    dh = linear_bwd(dy, h, params, grads, name + ".fc2")
    dh = dropout_bwd(dh, mask) * (pre > 0)
    return linear_bwd(dh, x, params, grads, name + ".fc1")


def sinusoid_positions(T: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange((d + 1) // 2)[None, :]
    ang = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : d // 2])
    return pe.astype(dtype)
