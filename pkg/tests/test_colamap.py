import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colactc.colamap import CoarseMapper, MappingError, MappingKind, label_histogram, map_id, map_sequence
from colactc.vocab import shuffle_ids

TABLE1 = {
    "tru": [0, 1, 2, 2, 2, 2, 2, 2, 2],
    "mod": [0, 1, 2, 0, 1, 2, 0, 1, 2],
    "div": [0, 0, 0, 1, 1, 1, 2, 2, 2],
    "log": [0, 0, 0, 1, 1, 2, 2, 2, 2],
}
KINDS = ["tru", "mod", "div", "log", "random"]


def log_oracle(z, V, L):
    """Largest k with V**k <= max(z, 1)**L, in exact integers, clamped to L-1."""
    z = max(z, 1)
    k = 0
    while k + 1 <= L - 1 and V ** (k + 1) <= z**L:
        k += 1
    return k


@pytest.mark.parametrize("kind", sorted(TABLE1))
def test_toy_table(kind):
    m = CoarseMapper(kind, 9, 3)
    assert [map_id(m, z) for z in range(9)] == TABLE1[kind]


def test_identity_and_errors():
    assert map_id(CoarseMapper("identity", 9, 9), 5) == 5
    with pytest.raises(MappingError):
        CoarseMapper("identity", 9, 3)
    with pytest.raises(MappingError):
        CoarseMapper("mod", 3, 4)
    with pytest.raises(MappingError):
        map_id(CoarseMapper("mod", 9, 3), 9)
    with pytest.raises(MappingError, match="index 2"):
        map_sequence(CoarseMapper("mod", 9, 3), [0, 1, 12])
    with pytest.raises(MappingError):
        MappingKind.parse("cluster")


def test_sequences_keep_duplicates():
    m = CoarseMapper("mod", 9, 3)
    assert map_sequence(m, [3, 4, 5]) == [0, 1, 2]
    assert map_sequence(m, [0, 3]) == [0, 0]
    assert map_sequence(CoarseMapper("identity", 9, 9), [8, 1, 1]) == [8, 1, 1]


def test_histograms():
    assert label_histogram(CoarseMapper("mod", 9, 3)).tolist() == [3, 3, 3]
    assert label_histogram(CoarseMapper("tru", 9, 3)).tolist() == [1, 1, 7]
    assert label_histogram(CoarseMapper("div", 10, 3)).tolist() == [4, 3, 3]
    with pytest.raises(MappingError):
        label_histogram(CoarseMapper("random", 10, 3))


vl = st.integers(1, 5000).flatmap(lambda V: st.tuples(st.just(V), st.integers(1, V)))


@given(vl, st.sampled_from(KINDS), st.data())
def test_range(vl_pair, kind, data):
    V, L = vl_pair
    z = data.draw(st.integers(0, V - 1))
    assert 0 <= map_id(CoarseMapper(kind, V, L, seed=1), z) < L


small_vl = st.integers(1, 400).flatmap(lambda V: st.tuples(st.just(V), st.integers(1, V)))


@given(small_vl)
@settings(max_examples=60, deadline=None)
def test_closed_forms(vl_pair):
    V, L = vl_pair
    tru, mod, div, lg = (CoarseMapper(k, V, L).table().tolist() for k in ("tru", "mod", "div", "log"))
    zs = range(V)
    assert tru == [min(z, L - 1) for z in zs]
    assert mod == [z % L for z in zs]
    assert div == [z * L // V for z in zs]
    assert lg == [log_oracle(z, V, L) for z in zs]


@given(vl)
@settings(max_examples=60, deadline=None)
def test_surjective_and_monotone(vl_pair):
    V, L = vl_pair
    for kind in ("mod", "div"):
        assert set(CoarseMapper(kind, V, L).table().tolist()) == set(range(L))
    for kind in ("tru", "div", "log"):
        t = CoarseMapper(kind, V, L).table().tolist()
        assert t == sorted(t)


def test_permutation_applied_first():
    p = shuffle_ids(9, 4)
    m = CoarseMapper("div", 9, 3, perm=p)
    assert [map_id(m, z) for z in range(9)] == [p(z) * 3 // 9 for z in range(9)]
    with pytest.raises(MappingError):
        CoarseMapper("div", 10, 3, perm=p)


def test_random_redraws_and_is_seeded():
    a = CoarseMapper("random", 50, 7, seed=11)
    b = CoarseMapper("random", 50, 7, seed=11)
    seq = [3] * 200
    ra = map_sequence(a, seq)
    assert ra == map_sequence(b, seq)
    assert len(set(ra)) == 7
    assert map_sequence(a, seq) != ra


def test_non_random_deterministic():
    m = CoarseMapper("log", 1000, 17)
    assert map_sequence(m, list(range(1000))) == map_sequence(CoarseMapper("log", 1000, 17), list(range(1000)))
