import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colactc.analysis import (
    AnalysisError,
    cosine_matrix,
    curve_extract,
    encoder_similarity,
    mean_pairwise_cosine,
)
from colactc.model.network import encode
from conftest import micro_config, perturbed_params


def naive_similarity(X):
    n = len(X)
    vals = []
    for i in range(n):
        for j in range(i + 1, n):
            a, b = X[i], X[j]
            vals.append(sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b)))
    return sum(vals) / len(vals)


def test_trivial_cases():
    assert mean_pairwise_cosine(np.ones((4, 3))) == pytest.approx(1.0)
    assert mean_pairwise_cosine(np.eye(3)) == pytest.approx(0.0)


@given(st.integers(2, 8), st.integers(0, 1000))
@settings(max_examples=30)
def test_scale_invariance(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    s = rng.uniform(0.1, 10, size=(n, 1))
    v = mean_pairwise_cosine(X)
    assert -1 - 1e-12 <= v <= 1 + 1e-12
    assert mean_pairwise_cosine(X * s) == pytest.approx(v, abs=1e-12)


def test_matches_double_loop(toy_items):
    spec, items = toy_items
    cfg = micro_config(v_src=spec.v_src, v_tgt=spec.v_tgt, f_dim=spec.f_dim)
    p = perturbed_params(cfg, scale=0.3)
    data = items[:10]
    rep = encoder_similarity(p, cfg, data, dump_index=0)
    per = []
    for t in data:
        X, lens, _ = encode(p, cfg, t.frames[None], [t.frames.shape[0]])
        per.append(naive_similarity(X[0, : lens[0]].tolist()))
    np.testing.assert_allclose(rep.per_utterance, per, atol=1e-6)
    assert rep.corpus_mean == pytest.approx(np.mean(per), abs=1e-6)
    np.testing.assert_allclose(np.diag(rep.matrix), 1.0, atol=1e-6)
    again = encoder_similarity(p, cfg, data)
    assert again.per_utterance == rep.per_utterance


def test_single_row_skipped(toy_items):
    spec, items = toy_items
    cfg = micro_config(v_src=spec.v_src, v_tgt=spec.v_tgt, f_dim=spec.f_dim, k_concat=100)
    rep = encoder_similarity(perturbed_params(cfg), cfg, items[:3])
    assert rep.n_skipped == 3 and rep.corpus_mean is None
    with pytest.raises(AnalysisError):
        encoder_similarity(perturbed_params(cfg), cfg, [])


def test_cosine_matrix_diag():
    S = cosine_matrix(np.random.default_rng(0).normal(size=(5, 4)))
    np.testing.assert_allclose(np.diag(S), 1.0)


def series(vals, key="total_loss"):
    return [{"step": i + 1, key: v} for i, v in enumerate(vals)]


def test_curve_extract():
    vals = [float(v) for v in range(1, 11)]
    assert [v for _, v in curve_extract(series(vals), "total_loss", 1)] == vals
    assert [v for _, v in curve_extract(series([2.5] * 7), "total_loss", 4)] == [2.5] * 7
    w5 = [v for _, v in curve_extract(series(vals), "total_loss", 5)]
    expect = [np.mean(vals[max(0, i - 4) : i + 1]) for i in range(10)]
    np.testing.assert_allclose(w5, expect)
    assert [s for s, _ in curve_extract(series(vals), "total_loss", 1, stride=3)] == [1, 4, 7, 10]
    with pytest.raises(AnalysisError, match="available: step, total_loss"):
        curve_extract(series(vals), "bleu")
    mixed = [{"step": 1, "ctc_loss": None}, {"step": 2, "ctc_loss": 3.0}]
    assert curve_extract(mixed, "ctc_loss") == [(2, 3.0)]
