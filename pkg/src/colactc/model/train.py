"""Training loop for the interpolated MLE + CTC objective."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from colactc.colamap import CoarseMapper
from colactc.data import Batch, Triplet, batch_iterator, collate
from colactc.model.config import ConfigError, TrainConfig
from colactc.model.network import (
    LossResult,
    Timers,
    count_params,
    forward_backward,
    init_params,
)
from colactc.model.optim import Adam, global_norm, inverse_sqrt_lr
from colactc.prng import Rng

log = logging.getLogger(__name__)

LABEL_SOURCES = ("transcript", "translation")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


def check_mapper(cfg: TrainConfig, mapper: CoarseMapper | None, label_source: str) -> None:
    if label_source not in LABEL_SOURCES:
        raise ConfigError(f"label_source: expected one of {LABEL_SOURCES}, got {label_source!r}")
    if cfg.lam == 0:
        return
    if mapper is None:
        raise ConfigError("a coarse-label mapper is required when lam > 0")
    V = cfg.v_src if label_source == "transcript" else cfg.v_tgt
    if mapper.V != V:
        raise ConfigError(f"mapper V={mapper.V} does not match the {label_source} vocabulary ({V})")
    if mapper.L != cfg.label_size:
        raise ConfigError(f"mapper L={mapper.L} does not match label_size={cfg.label_size}")


class LabelMaker:
    """Maps each batch item's label source through the mapper.

    A frozen Random mapper draws an item's labels on first use and reuses
    them; every other mapper is applied afresh per occurrence.
    """

    def __init__(self, mapper: CoarseMapper | None, label_source: str):
        self.mapper = mapper
        self.label_source = label_source
        self._cache: dict[int, list[int]] = {}

    def __call__(self, batch: Batch) -> list[list[int]] | None:
        if self.mapper is None:
            return None
        seqs = batch.transcripts if self.label_source == "transcript" else batch.translations
        if not (self.mapper.is_random and self.mapper.frozen):
            return [self.mapper.map_sequence(s) for s in seqs]
        out = []
        for idx, s in zip(batch.indices, seqs):
            if idx not in self._cache:
                self._cache[idx] = self.mapper.map_sequence(s)
            out.append(self._cache[idx])
        return out


def interpolated_loss(
    batch: Batch,
    params,
    cfg: TrainConfig,
    mapper: CoarseMapper | None,
    label_source: str = "transcript",
    lam: float | None = None,
    rng: Rng | None = None,
    need_grad: bool = True,
    timers: Timers | None = None,
) -> LossResult:
    """``(1 - lam) * MLE + lam * CTC`` with CTC labels ``map_sequence(mapper, source)``."""
    lam = cfg.lam if lam is None else lam
    labels = LabelMaker(mapper, label_source)(batch) if lam > 0 else None
    return forward_backward(
        params, cfg, batch.frames, batch.frame_lens, batch.translations,
        ctc_labels=labels, lam=lam, rng=rng, need_grad=need_grad, timers=timers,
    )


def evaluate(params, cfg: TrainConfig, dataset: Sequence[Triplet], batch_tokens: int | None = None) -> dict:
    """Teacher-forced held-out token accuracy (EOS included) and unsmoothed MLE."""
    if not dataset:
        return {"token_acc": None, "mle_loss": None, "n_tokens": 0}
    bt = batch_tokens or max(cfg.batch_tokens, max(len(t.translation_ids) for t in dataset))
    eval_cfg = TrainConfig.from_dict({**cfg.to_dict(), "label_smoothing": 0.0})
    correct = tokens = 0
    loss_sum = 0.0
    for idx in batch_iterator(dataset, bt, seed=0):
        batch = collate(dataset, sorted(idx), cfg.dtype)
        r = forward_backward(params, eval_cfg, batch.frames, batch.frame_lens, batch.translations,
                             lam=0.0, need_grad=False)
        correct += r.n_correct
        tokens += r.n_tokens
        loss_sum += r.mle * r.n_tokens
    return {"token_acc": correct / tokens, "mle_loss": loss_sum / tokens, "n_tokens": tokens}


@dataclass
class TrainResult:
    params: dict
    metrics: list[dict]
    skipped_infeasible: int
    wall_s: float
    n_params: int
    evals: list[dict] = field(default_factory=list)


def _all_finite(params) -> bool:
    return bool(np.isfinite(params.flat).all())


def train(
    cfg: TrainConfig,
    dataset: Sequence[Triplet],
    mapper: CoarseMapper | None,
    label_source: str = "transcript",
    valid: Sequence[Triplet] | None = None,
    metrics_path=None,
    deterministic: bool = False,
    eval_every: int = 0,
    params: dict | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``cfg.max_steps`` Adam steps, cycling deterministic epochs.

    Emits one metrics record per step.  In deterministic mode BLAS is pinned
    to one thread and ``wall_ms`` is written as null so the stream is
    bit-reproducible.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    check_mapper(cfg, mapper, label_source)
    if deterministic:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            return _train(cfg, dataset, mapper, label_source, valid, metrics_path, True,
                          eval_every, params, on_step)
    return _train(cfg, dataset, mapper, label_source, valid, metrics_path, False,
                  eval_every, params, on_step)


def _train(cfg, dataset, mapper, label_source, valid, metrics_path, deterministic,
           eval_every, params, on_step) -> TrainResult:
    params = init_params(cfg) if params is None else params
    opt = Adam(params, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
    drop_rng = Rng(cfg.seed).fork("dropout")
    labels = LabelMaker(mapper if cfg.lam > 0 else None, label_source)
    metrics: list[dict] = []
    evals: list[dict] = []
    skipped = 0
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    t_start = time.perf_counter()
    try:
        step = 0
        epoch = 0
        while step < cfg.max_steps:
            for idx in batch_iterator(dataset, cfg.batch_tokens, cfg.seed, epoch):
                if step >= cfg.max_steps:
                    break
                step += 1
                t0 = time.perf_counter()
                batch = collate(dataset, idx, cfg.dtype)
                ctc_labels = labels(batch)
                res = forward_backward(
                    params, cfg, batch.frames, batch.frame_lens, batch.translations,
                    ctc_labels=ctc_labels, rng=drop_rng,
                )
                if not math.isfinite(res.total):
                    raise TrainingDiverged(step, "loss")
                grads = res.grads
                if cfg.clip_norm > 0:
                    gn = global_norm(grads)
                    if gn > cfg.clip_norm:
                        grads.flat *= cfg.dtype(cfg.clip_norm / gn)
                lr = inverse_sqrt_lr(step, cfg.lr, cfg.warmup_steps)
                opt.step(params, grads, lr)
                if not _all_finite(params):
                    raise TrainingDiverged(step, "parameters")
                if res.n_infeasible:
                    skipped += res.n_infeasible
                    log.debug("step %d: %d CTC-infeasible items skipped", step, res.n_infeasible)
                rec = {
                    "step": step,
                    "lr": lr,
                    "mle_loss": res.mle,
                    "ctc_loss": res.ctc,
                    "total_loss": res.total,
                    "skipped_infeasible": res.n_infeasible,
                    "n_tokens": res.n_tokens,
                    "wall_ms": None if deterministic else (time.perf_counter() - t0) * 1e3,
                }
                metrics.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                if on_step:
                    on_step(rec)
                if eval_every and valid and step % eval_every == 0:
                    ev = {"step": step, **evaluate(params, cfg, valid)}
                    evals.append(ev)
                    log.info("step %d held-out token acc %.4f", step, ev["token_acc"])
            epoch += 1
    finally:
        if sink:
            sink.close()
    if skipped:
        log.info("%d CTC-infeasible items skipped during training", skipped)
    return TrainResult(
        params=params,
        metrics=metrics,
        skipped_infeasible=skipped,
        wall_s=time.perf_counter() - t_start,
        n_params=count_params(params),
        evals=evals,
    )
