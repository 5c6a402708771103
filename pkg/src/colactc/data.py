"""Synthetic frame-expanded translation task, JSON-lines I/O and batching.

Each source token id has a fixed random prototype vector; an utterance is
the concatenation of noisy copies of its tokens' prototypes (1+ frames per
token).  The translation is a fixed injective relabelling of the transcript
with occasional adjacent swaps, so transcript labels are monotonic with the
frames and translation labels only mostly so.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from colactc.prng import Rng

FLOAT_DIGITS = 6


class DataError(ValueError):
    pass


@dataclass
class TaskSpec:
    v_src: int = 512
    v_tgt: int = 512
    f_dim: int = 16
    zipf_s: float = 1.0
    expand_min: int = 3
    expand_max: int = 5
    noise_sigma: float = 0.3
    swap_prob: float = 0.1
    len_min: int = 4
    len_max: int = 12
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.v_src < 2 or self.v_tgt < 1:
            raise DataError(f"v_src must be >= 2 and v_tgt >= 1 (got {self.v_src}, {self.v_tgt})")
        if self.v_tgt < self.v_src:
            raise DataError(f"v_tgt={self.v_tgt} < v_src={self.v_src}: the token relabelling must be injective")
        if self.expand_min < 1 or self.expand_max < self.expand_min:
            raise DataError(f"need 1 <= expand_min <= expand_max (got {self.expand_min}, {self.expand_max})")
        if not 0.0 <= self.swap_prob <= 0.5:
            raise DataError(f"swap_prob must lie in [0, 0.5], got {self.swap_prob}")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise DataError(f"need 1 <= len_min <= len_max (got {self.len_min}, {self.len_max})")
        if self.noise_sigma < 0 or self.zipf_s < 0:
            raise DataError("noise_sigma and zipf_s must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class Triplet:
    frames: np.ndarray
    transcript_ids: list[int]
    translation_ids: list[int]

    def __eq__(self, other):
        return (
            isinstance(other, Triplet)
            and self.transcript_ids == other.transcript_ids
            and self.translation_ids == other.translation_ids
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )


def token_bijection(spec: TaskSpec) -> np.ndarray:
    """Source id -> target id table (first ``v_src`` entries of a seeded permutation)."""
    return Rng(spec.seed).fork("bijection").permutation(spec.v_tgt)[: spec.v_src]


def prototypes(spec: TaskSpec) -> np.ndarray:
    return Rng(spec.seed).fork("prototypes").normal((spec.v_src, spec.f_dim))


def zipf_cdf(V: int, s: float) -> np.ndarray:
    w = 1.0 / np.power(np.arange(1, V + 1, dtype=np.float64), s)
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def generate(spec: TaskSpec, n: int, offset: int = 0) -> list[Triplet]:
    """``n`` triplets; item ``i`` uses the stream ``fork("item/{offset + i}")``.

    Source tokens are Zipf(``zipf_s``) over ranks, redrawn when equal to the
    previous token (so genuine transcripts never need a separating blank).
    """
    protos = prototypes(spec)
    bij = token_bijection(spec)
    cdf = zipf_cdf(spec.v_src, spec.zipf_s)
    root = Rng(spec.seed)
    out = []
    for i in range(offset, offset + n):
        r = root.fork(f"item/{i}")
        length = spec.len_min + r.randint(spec.len_max - spec.len_min + 1)
        src: list[int] = []
        while len(src) < length:
            z = min(int(np.searchsorted(cdf, r.uniform(), side="right")), spec.v_src - 1)
            if not src or z != src[-1]:
                src.append(z)
        reps = spec.expand_min + r.randint(spec.expand_max - spec.expand_min + 1, size=(length,))
        frames = np.repeat(protos[src], reps, axis=0)
        if spec.noise_sigma > 0:
            frames = frames + spec.noise_sigma * r.normal(frames.shape)
        tgt = [int(bij[z]) for z in src]
        u = r.uniform((max(length - 1, 1),))
        j = 0
        while j < length - 1:
            if u[j] < spec.swap_prob:
                tgt[j], tgt[j + 1] = tgt[j + 1], tgt[j]
                j += 2
            else:
                j += 1
        out.append(Triplet(frames, src, tgt))
    return out


def split(spec: TaskSpec, n_train: int, n_valid: int) -> tuple[list[Triplet], list[Triplet]]:
    """Train items use indices [0, n_train), held-out items the next n_valid."""
    return generate(spec, n_train), generate(spec, n_valid, offset=n_train)


def _round(x: float) -> float:
    return float(f"{x:.{FLOAT_DIGITS}g}")


def write_jsonl(path, triplets: Sequence[Triplet]) -> None:
    """One object per line; frame values keep 6 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            rec = {
                "frames": [[_round(v) for v in row] for row in np.asarray(t.frames).tolist()],
                "transcript_ids": [int(z) for z in t.transcript_ids],
                "translation_ids": [int(z) for z in t.translation_ids],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


_KEYS = ("frames", "transcript_ids", "translation_ids")


def read_jsonl(path, v_src: int | None = None, v_tgt: int | None = None) -> list[Triplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            for key in _KEYS:
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing key {key!r}")
            frames = np.asarray(rec["frames"], dtype=np.float64)
            if frames.ndim != 2 or frames.shape[0] == 0:
                raise DataError(f"{path}:{lineno}: 'frames' must be a non-empty array of arrays")
            src = [int(z) for z in rec["transcript_ids"]]
            tgt = [int(z) for z in rec["translation_ids"]]
            _check_ids(src, v_src, f"{path}:{lineno}: transcript_ids")
            _check_ids(tgt, v_tgt, f"{path}:{lineno}: translation_ids")
            out.append(Triplet(frames, src, tgt))
    return out


def _check_ids(ids, V, where):
    for z in ids:
        if z < 0 or (V is not None and z >= V):
            raise DataError(f"{where}: id {z} outside [0, {V})")


def batch_iterator(
    dataset: Sequence[Triplet], batch_tokens: int, seed: int, epoch: int = 0
) -> Iterator[list[int]]:
    """One epoch of length-bucketed index batches.

    Items are shuffled (ties), stably sorted by target length, cut greedily
    so each batch's summed target tokens stay within ``batch_tokens``, and
    the batch order is shuffled.  Both shuffles use
    ``Rng(seed).fork("epoch/{epoch}")``.
    """
    lengths = np.array([len(t.translation_ids) for t in dataset], dtype=np.int64)
    if lengths.size and lengths.max() > batch_tokens:
        i = int(lengths.argmax())
        raise DataError(f"item {i} has {lengths[i]} target tokens > batch_tokens={batch_tokens}")
    r = Rng(seed).fork(f"epoch/{epoch}")
    order = r.permutation(len(dataset))
    order = order[np.argsort(lengths[order], kind="stable")]
    batches: list[list[int]] = []
    cur: list[int] = []
    used = 0
    for i in order.tolist():
        if cur and used + lengths[i] > batch_tokens:
            batches.append(cur)
            cur, used = [], 0
        cur.append(i)
        used += int(lengths[i])
    if cur:
        batches.append(cur)
    for b in r.permutation(len(batches)).tolist():
        yield batches[b]


@dataclass
class Batch:
    frames: np.ndarray
    frame_lens: np.ndarray
    transcripts: list[list[int]]
    translations: list[list[int]]
    indices: list[int]

    def __len__(self) -> int:
        return len(self.indices)


def collate(dataset: Sequence[Triplet], indices: Sequence[int], dtype=np.float32) -> Batch:
    items = [dataset[i] for i in indices]
    F = max(t.frames.shape[0] for t in items)
    f = items[0].frames.shape[1]
    frames = np.zeros((len(items), F, f), dtype=dtype)
    for b, t in enumerate(items):
        frames[b, : t.frames.shape[0]] = t.frames
    return Batch(
        frames=frames,
        frame_lens=np.array([t.frames.shape[0] for t in items], dtype=np.int64),
        transcripts=[list(t.transcript_ids) for t in items],
        translations=[list(t.translation_ids) for t in items],
        indices=list(indices),
    )


def spec_dict(spec: TaskSpec) -> dict:
    return asdict(spec)
