"""Counter-based SplitMix64 random streams.

Every random draw in the package (vocabulary shuffles, Random coarse labels,
synthetic data, parameter init, dropout masks, batch order) comes from this
generator so that any implementation can reproduce the exact streams.

Algorithm
---------
Output ``i`` (0-based) of a stream with 64-bit ``seed`` is::

    x = seed + (i + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9         (mod 2**64)
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB         (mod 2**64)
    x = x ^ (x >> 31)

which is exactly the sequence produced by the reference SplitMix64 stepping
function started from state ``seed``.  Derived quantities:

* uniform float in [0, 1): ``(x >> 11) * 2**-53``
* integer in [0, n): ``floor(u * n)`` for one uniform ``u``
* standard normal: Box-Muller on consecutive uniforms ``(u1, u2)``:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``
* 16-bit lanes (dropout masks): each output yields four values, least
  significant 16 bits first
* permutation of [0, n): Fisher-Yates, ``for i = n-1 .. 1: j = randint(i+1);
  swap(p[i], p[j])`` consuming one uniform per ``i`` in that order
* child stream ``fork(name)``: seed ``mix64(seed ^ fnv1a64(name))``
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_G = np.uint64(GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


class Rng:
    """A SplitMix64 stream: ``seed`` plus a counter of consumed outputs.

    Not thread-safe; give each consumer its own instance (``fork``).
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def fork(self, name: str) -> "Rng":
        return Rng(mix64(self.seed ^ fnv1a64(name)))

    def uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            x = idx * _G + np.uint64(self.seed)
            return _mix_array(x)

    def bits16(self, n: int) -> np.ndarray:
        words = self.uint64(-(-n // 4))
        return words.view(np.uint16)[:n] if np.little_endian else (
            np.stack([(words >> np.uint64(16 * j)) & np.uint64(0xFFFF) for j in range(4)], axis=1)
            .astype(np.uint16).ravel()[:n]
        )

    def next_uint64(self) -> int:
        return int(self.uint64(1)[0])

    def uniform(self, size=None) -> np.ndarray | float:
        n = int(np.prod(size)) if size is not None else 1
        u = (self.uint64(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def randint(self, n: int, size=None):
        """Integers in [0, n) via ``floor(u * n)``."""
        u = self.uniform(size if size is not None else (1,))
        out = np.minimum((u * n).astype(np.int64), n - 1)
        return int(out[0]) if size is None else out

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u = self.uniform((n, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return (r * np.cos(2.0 * np.pi * u[:, 1])).reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        u = self.uniform((n - 1,))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
