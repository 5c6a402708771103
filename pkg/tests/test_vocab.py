import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colactc.vocab import (
    ShufflePermutation,
    VocabError,
    Vocabulary,
    build_from_corpus,
    load_vocabulary,
    save_vocabulary,
    shuffle_ids,
)


def write(tmp_path, lines):
    p = tmp_path / "v.txt"
    p.write_text("".join(t + "\n" for t in lines), encoding="utf-8")
    return p


def test_load_line_index(tmp_path):
    v = load_vocabulary(write(tmp_path, ["the", "a", "cat"]))
    assert v.size == 3 and v.id_of("cat") == 2
    assert load_vocabulary(write(tmp_path, ["x"])).id_of("x") == 0


def test_duplicate_names_lines(tmp_path):
    with pytest.raises(VocabError, match=r"'a'.*1.*2"):
        load_vocabulary(write(tmp_path, ["a", "a"]))


def test_empty_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("", encoding="utf-8")
    with pytest.raises(VocabError):
        load_vocabulary(p)


def test_build_from_corpus_examples():
    assert build_from_corpus([["a", "b", "a"]]).tokens == ("a", "b")
    assert list(build_from_corpus([["b", "a"], ["a", "b"]]).tokens) == ["b", "a"]
    corpus = [["z"] * 1 + ["y"] * 3 + ["x"] * 5]
    assert list(build_from_corpus(corpus).tokens) == ["x", "y", "z"]
    with pytest.raises(VocabError):
        build_from_corpus([])


@given(st.lists(st.lists(st.sampled_from("abcdefgh"), max_size=8), min_size=1).filter(
    lambda c: any(c)))
def test_counts_non_increasing(corpus):
    v = build_from_corpus(corpus)
    flat = [t for s in corpus for t in s]
    counts = [flat.count(t) for t in v.tokens]
    assert counts == sorted(counts, reverse=True)
    # ties: first occurrence order
    first = {t: flat.index(t) for t in v.tokens}
    for a, b in zip(v.tokens, v.tokens[1:]):
        if flat.count(a) == flat.count(b):
            assert first[a] < first[b]


@given(st.lists(st.text(alphabet="abcxyzé中", min_size=1, max_size=4), min_size=1, unique=True))
@settings(max_examples=30)
def test_save_load_roundtrip(tmp_path_factory, toks):
    p = tmp_path_factory.mktemp("v") / "v.txt"
    v = Vocabulary(tuple(toks))
    save_vocabulary(v, p)
    assert load_vocabulary(p) == v
    assert all(v.token_of(v.id_of(t)) == t for t in toks)


def test_shuffle_examples():
    assert shuffle_ids(1, 123).perm == (0,)
    assert list(shuffle_ids(5, 7).perm) == list(shuffle_ids(5, 7).perm)
    assert sorted(shuffle_ids(100, 7).perm) == list(range(100))


@given(st.integers(1, 10**4), st.integers(0, 2**63))
@settings(max_examples=25)
def test_shuffle_bijective(V, seed):
    assert sorted(shuffle_ids(V, seed).as_array().tolist()) == list(range(V))


def test_permutation_json(tmp_path):
    p = shuffle_ids(10, 3)
    path = tmp_path / "p.json"
    p.save(path)
    assert json.loads(path.read_text()) == list(p.perm)
    assert list(ShufflePermutation.load(path).perm) == list(p.perm)
    with pytest.raises(VocabError):
        ShufflePermutation((0, 0, 1), 0)
