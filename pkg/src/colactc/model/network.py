"""Pre-norm transformer encoder-decoder with an MLE softmax and a CTC head.

Parameters live in a flat ``dict[str, ndarray]``.  ``out.w`` is the
softmax embedding (``V_mle x d``), ``ctc.w`` the CTC prediction weight
(``(L + 1) x d``); with ``share_params`` the CTC head reads ``out.w`` and no
``ctc.w`` exists.  Neither output projection has a bias.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from colactc.ctc import ctc_batch
from colactc.model import layers as nn
from colactc.model.config import TrainConfig
from colactc.prng import Rng


class ModelError(ValueError):
    pass


class Params(dict):
    """Named parameter arrays that are views into one contiguous ``flat`` buffer."""

    def __init__(self, arrays: dict | None = None, dtype=None):
        super().__init__()
        arrays = arrays or {}
        if dtype is None:
            dtype = next(iter(arrays.values())).dtype if arrays else np.float64
        self.flat = np.empty(sum(a.size for a in arrays.values()), dtype=dtype)
        off = 0
        for k, a in arrays.items():
            view = self.flat[off : off + a.size].reshape(a.shape)
            view[...] = a
            super().__setitem__(k, view)
            off += a.size

    def __setitem__(self, key, value):
        if key not in self:
            raise KeyError(f"cannot add {key!r} to a packed parameter set")
        self[key][...] = value

    def __reduce__(self):
        return (Params, ({k: np.array(v) for k, v in self.items()}, self.flat.dtype))

    def zeros_like(self) -> "Params":
        out = Params({k: v for k, v in self.items()}, self.flat.dtype)
        out.flat.fill(0)
        return out

    def copy(self) -> "Params":
        return Params({k: v for k, v in self.items()}, self.flat.dtype)


def init_params(cfg: TrainConfig, seed: int | None = None) -> Params:
    """Xavier-uniform linears, N(0, 1/d) embeddings, each drawn from a per-name stream."""
    base = Rng(cfg.seed if seed is None else seed).fork("init")
    dt = cfg.dtype
    d = cfg.d
    params: dict[str, np.ndarray] = {}

    def lin(name, n_in, n_out, bias=True):
        a = math.sqrt(6.0 / (n_in + n_out))
        u = base.fork(name).uniform((n_in, n_out))
        params[name + ".w"] = ((2.0 * u - 1.0) * a).astype(dt)
        if bias:
            params[name + ".b"] = np.zeros(n_out, dtype=dt)

    def norm(name):
        params[name + ".g"] = np.ones(d, dtype=dt)
        params[name + ".b"] = np.zeros(d, dtype=dt)

    def emb(name, rows):
        params[name] = (base.fork(name).normal((rows, d)) / math.sqrt(d)).astype(dt)

    def self_att(name):
        lin(f"{name}.qkv", d, 3 * d)
        lin(f"{name}.o", d, d)

    def cross_att(name):
        lin(f"{name}.q", d, d)
        lin(f"{name}.kv", d, 2 * d)
        lin(f"{name}.o", d, d)

    lin("enc.in", cfg.k_concat * cfg.f_dim, d)
    for i in range(cfg.n_enc):
        norm(f"enc.{i}.ln1")
        self_att(f"enc.{i}.att")
        norm(f"enc.{i}.ln2")
        lin(f"enc.{i}.ffn.fc1", d, cfg.ffn_dim)
        lin(f"enc.{i}.ffn.fc2", cfg.ffn_dim, d)
    norm("enc.ln")
    emb("dec.emb", cfg.v_mle)
    for i in range(cfg.n_dec):
        norm(f"dec.{i}.ln1")
        self_att(f"dec.{i}.self")
        norm(f"dec.{i}.ln2")
        cross_att(f"dec.{i}.cross")
        norm(f"dec.{i}.ln3")
        lin(f"dec.{i}.ffn.fc1", d, cfg.ffn_dim)
        lin(f"dec.{i}.ffn.fc2", cfg.ffn_dim, d)
    norm("dec.ln")
    emb("out.w", cfg.v_mle)
    if cfg.has_ctc_head and not cfg.share_params:
        emb("ctc.w", cfg.label_size + 1)
    return Params(params, dt)


def ctc_weight_name(cfg: TrainConfig) -> str:
    return "out.w" if cfg.share_params else "ctc.w"


def count_params(params: dict[str, np.ndarray]) -> int:
    """Trainable scalars.  A shared CTC head has no storage of its own."""
    return sum(int(a.size) for a in params.values())


class Timers:
    """Accumulates wall-clock milliseconds per named section."""

    def __init__(self):
        self.ms: dict[str, float] = {}

    @contextlib.contextmanager
    def section(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + (time.perf_counter() - t0) * 1e3


_NULL = contextlib.nullcontext()


def _sec(timers: Timers | None, name: str):
    return _NULL if timers is None else timers.section(name)


# ----------------------------------------------------------------------------
# encoder


def stack_frames(frames: np.ndarray, frame_lens, k: int):
    """Concatenate k neighbouring frames; a short last group is zero-padded."""
    B, F, f = frames.shape
    Tx = max(1, -(-F // k))
    if Tx * k != F:
        frames = np.concatenate([frames, np.zeros((B, Tx * k - F, f), frames.dtype)], axis=1)
    x_lens = -(-np.asarray(frame_lens, dtype=np.int64) // k)
    return frames.reshape(B, Tx, k * f), x_lens


def encode(params, cfg: TrainConfig, frames, frame_lens, rng: Rng | None = None):
    """Returns ``(X, x_lens, cache)``; X is ``B x ceil(F/k) x d``."""
    frames = np.asarray(frames, dtype=cfg.dtype)
    if frames.ndim != 3 or frames.shape[2] != cfg.f_dim:
        raise ModelError(f"frames must be B x F x {cfg.f_dim}, got shape {frames.shape}")
    p = cfg.dropout if rng is not None else 0.0
    stacked, x_lens = stack_frames(frames, frame_lens, cfg.k_concat)
    B, Tx, _ = stacked.shape
    h, _ = nn.linear_fwd(stacked, params, "enc.in")
    h = h + nn.sinusoid_positions(Tx, cfg.d, cfg.dtype)
    mask = (np.arange(Tx)[None, :] < x_lens[:, None])[:, None, None, :]
    caches = []
    for i in range(cfg.n_enc):
        name = f"enc.{i}"
        a_in, c1 = nn.layer_norm_fwd(h, params, name + ".ln1")
        a, ca = nn.attention_fwd(a_in, a_in, mask, params, name + ".att", cfg.n_heads, True)
        a, ma = nn.dropout_fwd(a, p, rng)
        h = h + a
        f_in, c2 = nn.layer_norm_fwd(h, params, name + ".ln2")
        f, cf = nn.ffn_fwd(f_in, params, name + ".ffn", p, rng)
        f, mf = nn.dropout_fwd(f, p, rng)
        h = h + f
        caches.append((c1, ca, ma, c2, cf, mf))
    X, cln = nn.layer_norm_fwd(h, params, "enc.ln")
    return X, x_lens, (stacked, caches, cln)


def encode_bwd(dX, cache, params, grads, cfg: TrainConfig) -> None:
    stacked, caches, cln = cache
    dh = nn.layer_norm_bwd(dX, cln, params, grads, "enc.ln")
    for i in reversed(range(cfg.n_enc)):
        name = f"enc.{i}"
        c1, ca, ma, c2, cf, mf = caches[i]
        df = nn.dropout_bwd(dh, mf)
        df = nn.ffn_bwd(df, cf, params, grads, name + ".ffn")
        dh = dh + nn.layer_norm_bwd(df, c2, params, grads, name + ".ln2")
        da = nn.dropout_bwd(dh, ma)
        dq, _ = nn.attention_bwd(da, ca, params, grads, name + ".att", cfg.n_heads)
        dh = dh + nn.layer_norm_bwd(dq, c1, params, grads, name + ".ln1")
    nn.linear_bwd(dh, stacked, params, grads, "enc.in")


# ----------------------------------------------------------------------------
# decoder


def decode_states(params, cfg: TrainConfig, X, x_lens, y_in, y_lens, rng: Rng | None = None):
    """Decoder output rows; row t sees only ``y_in[:, :t+1]`` (causal)."""
    p = cfg.dropout if rng is not None else 0.0
    y_in = np.asarray(y_in, dtype=np.int64)
    B, Ty = y_in.shape
    scale = math.sqrt(cfg.d)
    h = params["dec.emb"][y_in] * cfg.dtype(scale) + nn.sinusoid_positions(Ty, cfg.d, cfg.dtype)
    key_ok = np.arange(Ty)[None, :] < np.asarray(y_lens)[:, None]
    causal = np.tril(np.ones((Ty, Ty), dtype=bool))
    self_mask = causal[None, None] & key_ok[:, None, None, :]
    cross_mask = (np.arange(X.shape[1])[None, :] < np.asarray(x_lens)[:, None])[:, None, None, :]
    caches = []
    for i in range(cfg.n_dec):
        name = f"dec.{i}"
        s_in, c1 = nn.layer_norm_fwd(h, params, name + ".ln1")
        s, cs = nn.attention_fwd(s_in, s_in, self_mask, params, name + ".self", cfg.n_heads, True)
        s, ms = nn.dropout_fwd(s, p, rng)
        h = h + s
        x_in, c2 = nn.layer_norm_fwd(h, params, name + ".ln2")
        c, cc = nn.attention_fwd(x_in, X, cross_mask, params, name + ".cross", cfg.n_heads, False)
        c, mc = nn.dropout_fwd(c, p, rng)
        h = h + c
        f_in, c3 = nn.layer_norm_fwd(h, params, name + ".ln3")
        f, cf = nn.ffn_fwd(f_in, params, name + ".ffn", p, rng)
        f, mf = nn.dropout_fwd(f, p, rng)
        h = h + f
        caches.append((c1, cs, ms, c2, cc, mc, c3, cf, mf))
    Y, cln = nn.layer_norm_fwd(h, params, "dec.ln")
    return Y, (y_in, caches, cln)


def decode_bwd(dY, cache, params, grads, cfg: TrainConfig, X_shape):
    """Backprop through the decoder; returns the gradient w.r.t. the encoder output."""
    y_in, caches, cln = cache
    dX = np.zeros(X_shape, dtype=dY.dtype)
    dh = nn.layer_norm_bwd(dY, cln, params, grads, "dec.ln")
    for i in reversed(range(cfg.n_dec)):
        name = f"dec.{i}"
        c1, cs, ms, c2, cc, mc, c3, cf, mf = caches[i]
        df = nn.ffn_bwd(nn.dropout_bwd(dh, mf), cf, params, grads, name + ".ffn")
        dh = dh + nn.layer_norm_bwd(df, c3, params, grads, name + ".ln3")
        dq, dxc = nn.attention_bwd(nn.dropout_bwd(dh, mc), cc, params, grads, name + ".cross", cfg.n_heads)
        dX = dX + dxc
        dh = dh + nn.layer_norm_bwd(dq, c2, params, grads, name + ".ln2")
        dq, _ = nn.attention_bwd(nn.dropout_bwd(dh, ms), cs, params, grads, name + ".self", cfg.n_heads)
        dh = dh + nn.layer_norm_bwd(dq, c1, params, grads, name + ".ln1")
    demb = (dh * cfg.dtype(math.sqrt(cfg.d))).reshape(-1, cfg.d)
    np.add.at(grads["dec.emb"], y_in.reshape(-1), demb)
    return dX


# ----------------------------------------------------------------------------
# heads and losses


def smoothed_ce(logits, targets, mask, smoothing: float):
    """Per-token smoothed cross-entropy.

    Loss per token is ``-(1-eps) log p[y] - eps * mean_c log p[c]`` (uniform
    smoothing over all classes).  Returns ``(sum_loss, dlogits_per_token_sum,
    n_correct)`` where the gradient is that of the *sum* over unmasked tokens.
    """
    V = logits.shape[-1]
    logp = nn.log_softmax(logits)
    tgt = np.where(mask, targets, 0)
    nll = -np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    smooth = -logp.mean(axis=-1)
    per_tok = (1.0 - smoothing) * nll + smoothing * smooth
    total = float((per_tok * mask).sum(dtype=np.float64))
    prob = np.exp(logp)
    dl = prob - smoothing / V
    flat = dl.reshape(-1, V)
    flat[np.arange(flat.shape[0]), tgt.reshape(-1)] -= 1.0 - smoothing
    dl = dl * mask[..., None]
    correct = int(((logits.argmax(axis=-1) == targets) & mask).sum())
    return total, dl, correct


def mle_loss(Y, y, params, smoothing: float, mask=None) -> float:
    """Mean per-token smoothed cross-entropy of ``softmax(Y @ W_mle.T)``."""
    W = params["out.w"]
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= W.shape[0]):
        raise ModelError(f"target id outside [0, {W.shape[0]})")
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    total, _, _ = smoothed_ce(Y @ W.T, y, mask, smoothing)
    return total / max(int(mask.sum()), 1)


def ctc_head(X, params, cfg: TrainConfig):
    """Per-frame log-softmax over the L coarse labels plus blank (index L)."""
    return nn.log_softmax(X @ params[ctc_weight_name(cfg)].T)


@dataclass
class LossResult:
    total: float
    mle: float
    ctc: float | None
    n_tokens: int
    n_correct: int
    n_items: int
    n_infeasible: int
    grads: dict | None = field(default=None, repr=False)


def target_io(tgt_seqs, eos: int):
    """Teacher-forcing inputs ``[eos] + y`` and outputs ``y + [eos]``, right padded."""
    B = len(tgt_seqs)
    lens = np.array([len(y) + 1 for y in tgt_seqs], dtype=np.int64)
    Ty = int(lens.max())
    y_in = np.full((B, Ty), eos, dtype=np.int64)
    y_out = np.full((B, Ty), eos, dtype=np.int64)
    for b, y in enumerate(tgt_seqs):
        y_in[b, 1 : len(y) + 1] = y
        y_out[b, : len(y)] = y
    mask = np.arange(Ty)[None, :] < lens[:, None]
    return y_in, y_out, lens, mask


def forward_backward(
    params,
    cfg: TrainConfig,
    frames,
    frame_lens,
    tgt_seqs,
    ctc_labels=None,
    lam: float | None = None,
    rng: Rng | None = None,
    need_grad: bool = True,
    timers: Timers | None = None,
) -> LossResult:
    """``(1 - lam) * MLE + lam * CTC`` and its gradient for one padded batch.

    MLE is the mean over target tokens (EOS included), CTC the mean over
    feasible items; infeasible items contribute MLE only.  ``rng`` enables
    dropout.  With ``lam == 0`` the CTC head is not evaluated.
    """
    lam = cfg.lam if lam is None else float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ModelError(f"lambda must lie in [0, 1], got {lam}")
    use_ctc = lam > 0.0
    if use_ctc and ctc_weight_name(cfg) not in params:
        raise ModelError("model has no CTC head but lambda > 0")
    if use_ctc and ctc_labels is None:
        raise ModelError("lambda > 0 requires CTC labels")
    dt = cfg.dtype

    with _sec(timers, "encode"):
        X, x_lens, enc_cache = encode(params, cfg, frames, frame_lens, rng)
    with _sec(timers, "decode"):
        y_in, y_out, y_lens, y_mask = target_io(tgt_seqs, cfg.eos)
        Y, dec_cache = decode_states(params, cfg, X, x_lens, y_in, y_lens, rng)

    if not need_grad:
        grads = None
    elif isinstance(params, Params):
        grads = params.zeros_like()
    else:
        grads = {k: np.zeros_like(v) for k, v in params.items()}
    n_tok = int(y_mask.sum())
    with _sec(timers, "mle_head"):
        W = params["out.w"]
        logits = Y @ W.T
        mle_sum, dlog, n_correct = smoothed_ce(logits, y_out, y_mask, cfg.label_smoothing)
        mle = mle_sum / n_tok
        if need_grad:
            dlog = dlog * dt((1.0 - lam) / n_tok)
            dY = dlog @ W
            grads["out.w"] += nn._flat(dlog).T @ nn._flat(Y)

    ctc_val = None
    n_infeasible = 0
    dX_ctc = None
    if use_ctc:
        with _sec(timers, "ctc_head+loss"):
            wname = ctc_weight_name(cfg)
            Wc = params[wname]
            lp = nn.log_softmax(X @ Wc.T)
            losses, g, feasible = ctc_batch(lp, x_lens, ctc_labels, need_grad=need_grad)
            n_f = int(feasible.sum())
            n_infeasible = len(feasible) - n_f
            ctc_val = float(losses[feasible].mean()) if n_f else 0.0
            if need_grad and n_f:
                g = (g * (lam / n_f)).astype(dt)
                dlc = g - np.exp(lp) * g.sum(axis=-1, keepdims=True)
                dX_ctc = dlc @ Wc
                grads[wname] += nn._flat(dlc).T @ nn._flat(X)

    total = (1.0 - lam) * mle + (lam * ctc_val if use_ctc else 0.0)

    if need_grad:
        with _sec(timers, "backward"):
            dX = decode_bwd(dY, dec_cache, params, grads, cfg, X.shape)
            if dX_ctc is not None:
                dX = dX + dX_ctc
            encode_bwd(dX, enc_cache, params, grads, cfg)

    return LossResult(
        total=total,
        mle=mle,
        ctc=ctc_val,
        n_tokens=n_tok,
        n_correct=n_correct,
        n_items=len(tgt_seqs),
        n_infeasible=n_infeasible,
        grads=grads,
    )
