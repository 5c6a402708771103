"""Encoder-representation similarity and training-curve extraction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from colactc.data import Triplet
from colactc.model.config import TrainConfig
from colactc.model.network import encode

log = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


@dataclass
class SimilarityReport:
    per_utterance: list[float | None]
    corpus_mean: float | None
    n_skipped: int
    matrix: np.ndarray | None = field(default=None, repr=False)
    matrix_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "per_utterance": self.per_utterance,
            "corpus_mean": self.corpus_mean,
            "n_skipped": self.n_skipped,
            "matrix_index": self.matrix_index,
        }


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    U = X / np.maximum(norms, 1e-300)
    return U @ U.T


def mean_pairwise_cosine(X: np.ndarray) -> float:
    """Mean cosine over unordered row pairs ``i < j``; needs at least two rows."""
    n = X.shape[0]
    if n < 2:
        raise AnalysisError("need at least two rows")
    S = cosine_matrix(X)
    iu = np.triu_indices(n, k=1)
    return float(S[iu].mean())


def encoder_similarity(
    params,
    cfg: TrainConfig,
    dataset: Sequence[Triplet],
    dump_index: int | None = None,
) -> SimilarityReport:
    """Two-level mean: per-utterance pairwise cosine, then the average over utterances.

    Encodes in eval mode (no dropout), one utterance at a time so padding
    never enters the rows.  Utterances with a single encoder row are skipped.
    """
    if not dataset:
        raise AnalysisError("dataset is empty")
    per: list[float | None] = []
    skipped = 0
    matrix = None
    for i, t in enumerate(dataset):
        frames = np.asarray(t.frames, dtype=cfg.dtype)[None]
        X, x_lens, _ = encode(params, cfg, frames, [frames.shape[1]])
        rows = X[0, : int(x_lens[0])]
        if i == dump_index:
            matrix = cosine_matrix(rows)
        if rows.shape[0] < 2:
            per.append(None)
            skipped += 1
            continue
        per.append(mean_pairwise_cosine(rows))
    if skipped:
        log.info("encoder_similarity: %d single-row utterances skipped", skipped)
    vals = [v for v in per if v is not None]
    mean = float(np.mean(vals)) if vals else None
    return SimilarityReport(per, mean, skipped, matrix, dump_index if matrix is not None else None)


def write_matrix_tsv(path, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write("\t".join(f"{v:.6f}" for v in row) + "\n")


def read_metrics(path) -> list[dict]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise AnalysisError(f"{path}:{n}: malformed metrics line ({e.msg})") from None
    return out


def curve_extract(
    metrics: Iterable[dict],
    field_name: str,
    window: int = 1,
    stride: int = 1,
) -> list[tuple[int, float]]:
    """Trailing moving average of ``field_name``, sampled every ``stride`` records.

    Point ``i`` averages the last ``min(window, i + 1)`` values (records
    where the field is null are dropped first).  Returns ``(step, value)``.
    """
    if window < 1 or stride < 1:
        raise AnalysisError("window and stride must be positive")
    records = list(metrics)
    available = sorted({k for r in records for k in r})
    if field_name not in available:
        raise AnalysisError(f"unknown field {field_name!r}; available: {', '.join(available)}")
    pts = [(r.get("step", i + 1), r[field_name]) for i, r in enumerate(records)
           if r.get(field_name) is not None]
    if not pts:
        return []
    steps = [s for s, _ in pts]
    vals = np.asarray([v for _, v in pts], dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    idx = np.arange(len(vals))
    lo = np.maximum(idx + 1 - window, 0)
    smooth = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)
    return [(int(steps[i]), float(smooth[i])) for i in range(0, len(vals), stride)]
