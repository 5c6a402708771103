"""Autoregressive decoding from the MLE softmax (the CTC head is unused)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from colactc.model import layers as nn
from colactc.model.config import TrainConfig
from colactc.model.network import decode_states, encode


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalized log-probability; EOS counts as a token when emitted."""
        n = len(self.tokens) + (1 if self.finished else 0)
        return self.logprob / max(n, 1)


def _encode_one(params, cfg, frames):
    frames = np.asarray(frames, dtype=cfg.dtype)[None]
    X, x_lens, _ = encode(params, cfg, frames, [frames.shape[1]])
    return X, x_lens


def _next_logprobs(params, cfg, X, x_lens, prefixes: list[list[int]]) -> np.ndarray:
    """Log-probabilities of the next token for each prefix (all the same length)."""
    n = len(prefixes)
    y_in = np.array([[cfg.eos] + p for p in prefixes], dtype=np.int64)
    Xb = np.broadcast_to(X, (n,) + X.shape[1:])
    lens = np.full(n, y_in.shape[1])
    Y, _ = decode_states(params, cfg, Xb, np.repeat(x_lens, n), y_in, lens)
    logits = Y[:, -1] @ params["out.w"].T
    return nn.log_softmax(logits.astype(np.float64))


def max_decode_len(cfg: TrainConfig, n_frames: int) -> int:
    return int(cfg.max_decode_ratio * -(-n_frames // cfg.k_concat)) + 10


def greedy(params, cfg: TrainConfig, frames, max_len: int | None = None) -> Hypothesis:
    X, x_lens = _encode_one(params, cfg, frames)
    max_len = max_len or max_decode_len(cfg, np.asarray(frames).shape[0])
    toks: list[int] = []
    lp = 0.0
    for _ in range(max_len):
        row = _next_logprobs(params, cfg, X, x_lens, [toks])[0]
        a = int(row.argmax())
        lp += float(row[a])
        if a == cfg.eos:
            return Hypothesis(toks, lp, True)
        toks.append(a)
    return Hypothesis(toks, lp, False)


def beam(params, cfg: TrainConfig, frames, beam_size: int | None = None,
         max_len: int | None = None) -> Hypothesis:
    """Beam search ranked by length-normalized score.

    Live hypotheses are pruned by raw cumulative log-probability; the
    greedy hypothesis is always among the final candidates, so the returned
    score is never below greedy's.
    """
    k = beam_size or cfg.beam_size
    X, x_lens = _encode_one(params, cfg, frames)
    max_len = max_len or max_decode_len(cfg, np.asarray(frames).shape[0])
    live = [Hypothesis([], 0.0, False)]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        lp = _next_logprobs(params, cfg, X, x_lens, [h.tokens for h in live])
        cand = (np.array([h.logprob for h in live])[:, None] + lp).ravel()
        order = np.argsort(-cand, kind="stable")[: 2 * k]
        V = lp.shape[1]
        nxt: list[Hypothesis] = []
        for idx in order:
            h = live[idx // V]
            tok = int(idx % V)
            if tok == cfg.eos:
                done.append(Hypothesis(list(h.tokens), float(cand[idx]), True))
            else:
                nxt.append(Hypothesis(h.tokens + [tok], float(cand[idx]), False))
            if len(nxt) == k:
                break
        live = nxt
        if len(done) >= k or not live:
            break
    pool = done + live + [greedy(params, cfg, frames, max_len)]
    return max(pool, key=lambda h: h.score)


def decode(params, cfg: TrainConfig, frames, mode: str = "beam", beam_size: int | None = None) -> list[int]:
    if mode == "greedy":
        return greedy(params, cfg, frames).tokens
    if mode == "beam":
        return beam(params, cfg, frames, beam_size).tokens
    raise ValueError(f"unknown decode mode {mode!r} (expected 'greedy' or 'beam')")
