"""Vocabulary-to-coarse-label mappings f(z): [0, V) -> [0, L)."""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from colactc.prng import Rng
from colactc.vocab import ShufflePermutation


class MappingError(ValueError):
    pass


class MappingKind(str, enum.Enum):
    IDENTITY = "identity"
    TRUNCATION = "tru"
    MODULO = "mod"
    DIVISION = "div"
    LOG_SCALING = "log"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: "str | MappingKind") -> "MappingKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "truncation": "tru",
            "modulo": "mod",
            "division": "div",
            "logscaling": "log",
            "log_scaling": "log",
            "log-scaling": "log",
            "genuine": "identity",
        }
        key = str(value).lower()
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise MappingError(f"unknown mapping {value!r} (expected one of: {names})") from None


def _log_label(z: int, V: int, L: int) -> int:
    """floor(ln(max(z,1)) * L / ln(V)), clamped to L-1.

    Equivalently the largest k with V**k <= max(z,1)**L; float results that
    land within 1e-9 of an integer are settled with that exact comparison.
    """
    if V <= 1:
        return 0
    z = max(z, 1)
    x = math.log(z) * L / math.log(V)
    k = math.floor(x)
    nearest = round(x)
    if abs(x - nearest) < 1e-9:
        k = nearest if V**nearest <= z**L else nearest - 1
    return min(max(k, 0), L - 1)


class CoarseMapper:
    """One mapping kind over a (V, L) pair, optionally after a vocabulary shuffle.

    Non-Random kinds are precomputed into a length-V lookup table.  Random
    draws a fresh label per occurrence from the mapper's own SplitMix64
    stream, so a Random instance must not be shared between threads.
    """

    def __init__(
        self,
        kind: "MappingKind | str",
        V: int,
        L: int,
        seed: int = 0,
        perm: ShufflePermutation | None = None,
        frozen: bool = False,
    ):
        self.kind = MappingKind.parse(kind)
        self.V = int(V)
        self.L = int(L)
        self.seed = int(seed)
        self.perm = perm
        # Random only: trainer draws each item's labels once and reuses them.
        self.frozen = bool(frozen)
        if self.V < 1 or self.L < 1:
            raise MappingError(f"V and L must be positive (V={self.V}, L={self.L})")
        if self.L > self.V:
            raise MappingError(f"label size L={self.L} exceeds vocabulary size V={self.V}")
        if self.kind is MappingKind.IDENTITY and self.L != self.V:
            raise MappingError(f"identity mapping requires L == V (L={self.L}, V={self.V})")
        if perm is not None and perm.size != self.V:
            raise MappingError(f"permutation size {perm.size} != V={self.V}")
        self._rng = Rng(self.seed) if self.kind is MappingKind.RANDOM else None
        self._table = None if self.kind is MappingKind.RANDOM else self._build_table()

    def __repr__(self) -> str:
        extra = ", perm" if self.perm is not None else ""
        return f"CoarseMapper({self.kind.value}, V={self.V}, L={self.L}{extra})"

    @property
    def is_random(self) -> bool:
        return self.kind is MappingKind.RANDOM

    def _base(self, z: int) -> int:
        V, L = self.V, self.L
        kind = self.kind
        if kind is MappingKind.IDENTITY:
            return z
        if kind is MappingKind.TRUNCATION:
            return min(z, L - 1)
        if kind is MappingKind.MODULO:
            return z % L
        if kind is MappingKind.DIVISION:
            return (z * L) // V
        if kind is MappingKind.LOG_SCALING:
            return _log_label(z, V, L)
        raise AssertionError(kind)

    def _build_table(self) -> np.ndarray:
        src = np.arange(self.V) if self.perm is None else self.perm.as_array()
        return np.array([self._base(int(z)) for z in src], dtype=np.int64)

    def table(self) -> np.ndarray:
        if self._table is None:
            raise MappingError("random mapping has no fixed lookup table")
        return self._table.copy()

    def map_id(self, z: int) -> int:
        z = int(z)
        if not 0 <= z < self.V:
            raise MappingError(f"token id {z} out of range [0, {self.V})")
        if self._table is None:
            return int(self._rng.randint(self.L))
        return int(self._table[z])

    def map_array(self, zs) -> np.ndarray:
        zs = np.asarray(zs, dtype=np.int64)
        bad = np.flatnonzero((zs < 0) | (zs >= self.V))
        if bad.size:
            i = int(bad[0])
            raise MappingError(f"token id {int(zs.flat[i])} at index {i} out of range [0, {self.V})")
        if self._table is None:
            return self._rng.randint(self.L, size=zs.shape).astype(np.int64)
        return self._table[zs]

    def map_sequence(self, zs: Sequence[int]) -> list[int]:
        """Element-wise mapping; repeated labels are kept, never collapsed."""
        return self.map_array(list(zs)).tolist()

    def label_histogram(self) -> np.ndarray:
        if self._table is None:
            raise MappingError("label_histogram is undefined for the random mapping")
        return np.bincount(self._table, minlength=self.L)


def map_id(m: CoarseMapper, z: int) -> int:
    return m.map_id(z)


def map_sequence(m: CoarseMapper, zs: Sequence[int]) -> list[int]:
    return m.map_sequence(zs)


def label_histogram(m: CoarseMapper) -> np.ndarray:
    return m.label_histogram()
