"""Frequency-ranked vocabularies and the shuffled-vocabulary ablation."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from colactc.prng import Rng


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Token table where id == rank (0 is the most frequent token)."""

    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if not tokens:
            raise VocabError("vocabulary is empty")
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r} at ranks {index[tok]} and {i}")
            index[tok] = i
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def load_vocabulary(path) -> Vocabulary:
    """Read one token per line (UTF-8, no header); id is the 0-based line index."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise VocabError(f"{path}: empty vocabulary file")
    seen: dict[str, int] = {}
    for lineno, tok in enumerate(lines, start=1):
        if tok in seen:
            raise VocabError(
                f"{path}: duplicate token {tok!r} at lines {seen[tok]} and {lineno}"
            )
        seen[tok] = lineno
    return Vocabulary(tuple(lines))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def build_from_corpus(sentences: Sequence[Sequence[str]]) -> Vocabulary:
    """Rank tokens by descending count; ties go to the earliest first occurrence."""
    counts: Counter[str] = Counter()
    first: dict[str, int] = {}
    pos = 0
    for sent in sentences:
        for tok in sent:
            counts[tok] += 1
            if tok not in first:
                first[tok] = pos
            pos += 1
    if not counts:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return Vocabulary(tuple(ranked))


@dataclass(frozen=True)
class ShufflePermutation:
    """Bijection on [0, V) used to scramble vocabulary ids before mapping."""

    perm: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise VocabError("permutation is not a bijection on [0, V)")
        object.__setattr__(self, "perm", perm)

    @property
    def size(self) -> int:
        return len(self.perm)

    def __call__(self, z: int) -> int:
        return self.perm[z]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.perm, dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(list(self.perm))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ShufflePermutation":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list) or not all(isinstance(x, int) for x in data):
            raise VocabError(f"{path}: permutation must be a JSON array of integers")
        return cls(tuple(data))


def shuffle_ids(vocab: Vocabulary | int, seed: int) -> ShufflePermutation:
    """Fisher-Yates permutation of [0, V) from the SplitMix64 stream ``seed``."""
    size = vocab if isinstance(vocab, int) else vocab.size
    if size < 1:
        raise VocabError("V must be >= 1")
    return ShufflePermutation(tuple(Rng(seed).permutation(size).tolist()), seed=seed)
