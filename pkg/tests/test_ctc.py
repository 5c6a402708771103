import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colactc.ctc import (
    CTCError,
    brute_force_nll,
    collapse,
    ctc_batch,
    ctc_feasible,
    ctc_grad,
    ctc_neg_log_likelihood,
    ctc_posteriors,
    greedy_ctc_decode,
    log_softmax,
    min_frames,
)

A, B = 0, 1


def enumerate_nll(logp, z):
    """Independent oracle: sum path probabilities by explicit collapse."""
    T, C = logp.shape
    blank = C - 1
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        merged = [k for k, _ in itertools.groupby(path)]
        if [k for k in merged if k != blank] == list(z):
            total += math.exp(sum(logp[t, a] for t, a in enumerate(path)))
    return math.inf if total == 0 else -math.log(total)


def random_lattice(rng, T, C):
    return log_softmax(rng.normal(size=(T, C)) * 2.0)


def test_collapse_examples():
    blank = 2
    assert collapse([A, A, blank, B], blank) == [A, B]
    assert collapse([blank, blank], blank) == []
    assert collapse([A, blank, A], blank) == [A, A]


def test_scalar_examples():
    lp = np.log(np.array([[0.7, 0.3]]))
    assert ctc_neg_log_likelihood(lp, [0]) == pytest.approx(-math.log(0.7), abs=1e-12)
    lp = np.log(np.array([[1e-300, 1.0], [1e-300, 1.0]]))
    assert ctc_neg_log_likelihood(lp, []) == pytest.approx(0.0, abs=1e-12)
    lp = np.full((2, 3), -math.log(3))
    assert ctc_neg_log_likelihood(lp, [0]) == pytest.approx(-math.log(1 / 3), abs=1e-12)


def test_infeasible_is_infinite():
    lp = np.full((2, 3), -math.log(3))
    assert math.isinf(ctc_neg_log_likelihood(lp, [0, 0]))
    assert math.isinf(brute_force_nll(lp, [0, 1, 0]))
    with pytest.raises(CTCError):
        ctc_grad(lp, [0, 0])
    with pytest.raises(CTCError):
        ctc_neg_log_likelihood(np.zeros((0, 3)), [])


def test_blank_only_target():
    rng = np.random.default_rng(0)
    lp = random_lattice(rng, 5, 4)
    assert ctc_neg_log_likelihood(lp, []) == pytest.approx(-lp[:, 3].sum(), abs=1e-12)


def test_brute_force_guard():
    with pytest.raises(CTCError):
        brute_force_nll(np.full((20, 3), -math.log(3)), [0])


@given(st.integers(1, 6), st.integers(1, 3), st.lists(st.integers(0, 2), max_size=3), st.integers(0, 2**31))
@settings(max_examples=150, deadline=None)
def test_dp_matches_enumeration(T, L, z, seed):
    z = [x % L for x in z]
    lp = random_lattice(np.random.default_rng(seed), T, L + 1)
    dp = ctc_neg_log_likelihood(lp, z)
    ref = enumerate_nll(lp, z)
    if math.isinf(ref):
        assert math.isinf(dp)
    else:
        assert abs(dp - ref) <= 1e-9
    assert math.isfinite(dp) == ctc_feasible(T, z)


@given(st.lists(st.integers(0, 3), max_size=8), st.integers(0, 12))
def test_feasibility_rule(z, T):
    need = len(z) + sum(a == b for a, b in zip(z, z[1:]))
    assert min_frames(z) == need
    assert ctc_feasible(T, z) == (T >= need)


def fd_grad(lp, z, eps=1e-5):
    g = np.zeros_like(lp)
    for idx in np.ndindex(*lp.shape):
        up, dn = lp.copy(), lp.copy()
        up[idx] += eps
        dn[idx] -= eps
        g[idx] = (ctc_neg_log_likelihood(up, z) - ctc_neg_log_likelihood(dn, z)) / (2 * eps)
    return g


def test_grad_single_frame():
    lp = np.log(np.array([[0.2, 0.5, 0.3]]))
    g = ctc_grad(lp, [1])
    assert g.tolist() == [[0.0, -1.0, 0.0]]


@pytest.mark.parametrize("T,C,z", [(3, 3, [0, 0]), (5, 4, [1, 2]), (6, 3, [0, 1, 0]), (4, 2, [])])
def test_grad_matches_finite_differences(T, C, z):
    lp = random_lattice(np.random.default_rng(T * 7 + C), T, C)
    g = ctc_grad(lp, z)
    num = fd_grad(lp, z)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) <= 1e-4


def test_posteriors_are_distributions():
    lp = random_lattice(np.random.default_rng(1), 7, 4)
    post = ctc_posteriors(lp, [0, 2, 2])
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
    assert post.min() >= -1e-15


def test_long_sequence_no_underflow():
    rng = np.random.default_rng(2)
    T, C = 2000, 257
    lp = random_lattice(rng, T, C)
    z = rng.integers(0, C - 1, size=300).tolist()
    loss, g, ok = ctc_batch(lp[None], [T], [z])
    assert ok[0] and np.isfinite(loss[0]) and np.isfinite(g).all()


def test_batch_equals_single_items():
    rng = np.random.default_rng(3)
    lps = [random_lattice(rng, T, 4) for T in (6, 3, 5)]
    zs = [[0, 1], [2, 2, 1], [1]]
    Tm = max(l.shape[0] for l in lps)
    pad = np.stack([np.vstack([l, np.zeros((Tm - l.shape[0], 4))]) for l in lps])
    losses, grads, ok = ctc_batch(pad, [6, 3, 5], zs)
    assert ok.tolist() == [True, False, True]
    for b in (0, 2):
        assert losses[b] == pytest.approx(ctc_neg_log_likelihood(lps[b], zs[b]), abs=1e-12)
        T = lps[b].shape[0]
        np.testing.assert_allclose(grads[b, :T], ctc_grad(lps[b], zs[b]), atol=1e-12)
        assert not grads[b, T:].any()
    assert math.isinf(losses[1]) and not grads[1].any()


def test_against_torch_ctc():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(4)
    T, C = 12, 6
    lp = random_lattice(rng, T, C)
    z = [0, 3, 3, 1]
    ref = torch.nn.functional.ctc_loss(
        torch.tensor(lp)[:, None, :], torch.tensor([z]), torch.tensor([T]), torch.tensor([len(z)]),
        blank=C - 1, reduction="none",
    )
    assert ctc_neg_log_likelihood(lp, z) == pytest.approx(float(ref[0]), abs=1e-9)


def test_greedy_decode():
    blank = 2
    def lat(path):
        lp = np.full((len(path), 3), -5.0)
        for t, a in enumerate(path):
            lp[t, a] = 0.0
        return lp
    assert greedy_ctc_decode(lat([A, A, blank, B])) == [A, B]
    assert greedy_ctc_decode(lat([blank, blank])) == []
    assert greedy_ctc_decode(lat([A, blank, A])) == [A, A]
