"""CTC negative log-likelihood, its gradient, and helpers.

Lattices are ``T x C`` arrays of per-frame log-probabilities whose last
class (``C - 1``) is the blank.  The dynamic program runs in log space over
the blank-interleaved label sequence; "log zero" is the finite sentinel
``LOG_ZERO = -1e30`` so that every intermediate stays a real number.
Infeasible pairs (too few frames) are detected up front and reported as
``+inf``.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

LOG_ZERO = -1e30
BRUTE_FORCE_LIMIT = 10**6


class CTCError(ValueError):
    pass


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for a in path:
        a = int(a)
        if a != prev and a != blank:
            out.append(a)
        prev = a
    return out


def min_frames(z: Sequence[int]) -> int:
    """Shortest alignment: one frame per label plus a blank between repeats."""
    z = list(z)
    return len(z) + sum(1 for a, b in zip(z, z[1:]) if a == b)


def ctc_feasible(T: int, z: Sequence[int]) -> bool:
    return T >= min_frames(z)


def _as_lattice(logp) -> np.ndarray:
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2 or logp.shape[0] == 0 or logp.shape[1] < 2:
        raise CTCError(f"lattice must be T x C with T >= 1 and C >= 2, got shape {logp.shape}")
    return logp


def _check_labels(z, C: int) -> list[int]:
    z = [int(a) for a in z]
    for i, a in enumerate(z):
        if not 0 <= a < C - 1:
            raise CTCError(f"label {a} at position {i} outside [0, {C - 1})")
    return z


def _shift_right(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, LOG_ZERO)
    if k < x.shape[1]:
        out[:, k:] = x[:, :-k]
    return out


def _shift_left(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, LOG_ZERO)
    if k < x.shape[1]:
        out[:, :-k] = x[:, k:]
    return out


def _lse(*xs: np.ndarray) -> np.ndarray:
    m = xs[0]
    for x in xs[1:]:
        m = np.maximum(m, x)
    acc = np.zeros_like(m)
    for x in xs:
        acc += np.exp(x - m)
    return m + np.log(acc)


def ctc_batch(
    logp: np.ndarray,
    lengths: Sequence[int],
    labels: Sequence[Sequence[int]],
    need_grad: bool = True,
):
    """Forward-backward over a padded batch.

    ``logp`` is ``B x T x C`` (blank = C-1), ``lengths[b]`` the valid frame
    count of item ``b``.  Returns ``(losses, grads, feasible)`` where
    ``losses[b]`` is the NLL in nats (``inf`` when infeasible), ``grads`` the
    ``B x T x C`` gradient of each item's loss w.r.t. its log-probabilities
    (zero for infeasible items and padded frames; ``None`` without
    ``need_grad``) and ``feasible`` a boolean mask.
    """
    logp = np.asarray(logp)
    B, Tmax, C = logp.shape
    blank = C - 1
    lengths = np.asarray(lengths, dtype=np.int64)
    labels = [list(map(int, z)) for z in labels]
    feasible = np.array(
        [1 <= lengths[b] <= Tmax and ctc_feasible(int(lengths[b]), labels[b]) for b in range(B)]
    )

    S_b = np.array([2 * len(z) + 1 for z in labels], dtype=np.int64)
    S = int(S_b.max()) if B else 1
    ext = np.full((B, S), blank, dtype=np.int64)
    for b, z in enumerate(labels):
        if z:
            ext[b, 1 : 2 * len(z) : 2] = z
    s_idx = np.arange(S)
    valid = s_idx[None, :] < S_b[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])

    # emission log-probs along the extended sequence: B x T x S
    em = np.take_along_axis(logp.astype(np.float64, copy=False), np.broadcast_to(ext[:, None, :], (B, Tmax, S)), axis=2)
    em = np.where(valid[:, None, :], em, LOG_ZERO)

    alpha = np.full((B, Tmax, S), LOG_ZERO)
    a = np.full((B, S), LOG_ZERO)
    a[:, 0] = em[:, 0, 0]
    if S > 1:
        a[:, 1] = np.where(S_b > 1, em[:, 0, 1], LOG_ZERO)
    alpha[:, 0] = a
    for t in range(1, Tmax):
        prev1 = _shift_right(a, 1)
        prev2 = np.where(skip, _shift_right(a, 2), LOG_ZERO)
        new = _lse(a, prev1, prev2) + em[:, t]
        new = np.where(valid, np.maximum(new, LOG_ZERO), LOG_ZERO)
        active = (t < lengths)[:, None]
        a = np.where(active, new, a)
        alpha[:, t] = a

    last = np.take_along_axis(a, (S_b - 1)[:, None], axis=1)[:, 0]
    second = np.where(
        S_b > 1, np.take_along_axis(a, np.maximum(S_b - 2, 0)[:, None], axis=1)[:, 0], LOG_ZERO
    )
    log_lik = _lse(last, second)
    losses = np.where(feasible, -log_lik, np.inf)

    if not need_grad:
        return losses, None, feasible

    # beta excludes the emission at its own frame
    init = np.full((B, S), LOG_ZERO)
    init[np.arange(B), S_b - 1] = 0.0
    has2 = S_b > 1
    init[np.arange(B)[has2], (S_b - 2)[has2]] = 0.0
    beta = np.full((B, Tmax, S), LOG_ZERO)
    bcur = init.copy()
    beta[:, Tmax - 1] = init
    skip_next = np.zeros((B, S), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(Tmax - 2, -1, -1):
        nxt = bcur + em[:, t + 1]
        n1 = _shift_left(nxt, 1)
        n2 = np.where(skip_next, _shift_left(nxt, 2), LOG_ZERO)
        new = _lse(nxt, n1, n2)
        new = np.where(valid, np.maximum(new, LOG_ZERO), LOG_ZERO)
        inside = (t < lengths - 1)[:, None]
        bcur = np.where(inside, new, init)
        beta[:, t] = bcur

    occ = np.exp(np.minimum(alpha + beta - log_lik[:, None, None], 0.0))
    tmask = (np.arange(Tmax)[None, :] < lengths[:, None]) & feasible[:, None]
    occ = occ * tmask[:, :, None] * valid[:, None, :]
    flat = (
        np.arange(B)[:, None, None] * (Tmax * C)
        + np.arange(Tmax)[None, :, None] * C
        + ext[:, None, :]
    )
    grads = -np.bincount(flat.ravel(), weights=occ.ravel(), minlength=B * Tmax * C)
    return losses, grads.reshape(B, Tmax, C), feasible


def ctc_neg_log_likelihood(logp, z: Sequence[int]) -> float:
    """-log of the summed probability of all alignments collapsing to ``z``.

    Returns ``inf`` for infeasible pairs (``T < min_frames(z)``).
    """
    logp = _as_lattice(logp)
    z = _check_labels(z, logp.shape[1])
    losses, _, _ = ctc_batch(logp[None], [logp.shape[0]], [z], need_grad=False)
    return float(losses[0])


def ctc_loss_and_grad(logp, z: Sequence[int]) -> tuple[float, np.ndarray]:
    logp = _as_lattice(logp)
    z = _check_labels(z, logp.shape[1])
    if not ctc_feasible(logp.shape[0], z):
        raise CTCError(f"infeasible: T={logp.shape[0]} < {min_frames(z)} frames required by labels")
    losses, grads, _ = ctc_batch(logp[None], [logp.shape[0]], [z])
    return float(losses[0]), grads[0]


def ctc_grad(logp, z: Sequence[int]) -> np.ndarray:
    """Gradient of the NLL w.r.t. every entry of ``logp`` (entries treated as free)."""
    return ctc_loss_and_grad(logp, z)[1]


def ctc_posteriors(logp, z: Sequence[int]) -> np.ndarray:
    """Per-frame class occupancy: probability that frame t emits class c."""
    return -ctc_grad(logp, z)


def brute_force_nll(logp, z: Sequence[int]) -> float:
    """Exact NLL by enumerating all C**T paths (test oracle)."""
    logp = _as_lattice(logp)
    T, C = logp.shape
    z = _check_labels(z, C)
    if C**T > BRUTE_FORCE_LIMIT:
        raise CTCError(f"brute force over C**T = {C}**{T} paths exceeds {BRUTE_FORCE_LIMIT}")
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if collapse(path, C - 1) == z:
            total += float(np.exp(sum(logp[t, a] for t, a in enumerate(path))))
    return float("inf") if total == 0.0 else -float(np.log(total))


def greedy_ctc_decode(logp) -> list[int]:
    logp = _as_lattice(logp)
    return collapse(np.argmax(logp, axis=1), logp.shape[1] - 1)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    y = x - m
    return y - np.log(np.exp(y).sum(axis=axis, keepdims=True))


def check_lattice(logp, atol: float = 1e-6) -> None:
    logp = _as_lattice(logp)
    err = np.abs(np.logaddexp.reduce(logp, axis=1))
    if err.max() > atol:
        t = int(err.argmax())
        raise CTCError(f"row {t} of the lattice does not normalize (|logsumexp| = {err[t]:.3g})")
