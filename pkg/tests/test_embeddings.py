import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prereqrec.embeddings import EmbeddingProvider, cosine, cosine_matrix


def test_same_phrase_same_vector():
    p = EmbeddingProvider()
    assert np.array_equal(p.embed("Graph Theory"), p.embed("graph  theory"))


def test_file_lookup_verbatim(tmp_path):
    vec = np.array([0.1, -2.5, 3.25])
    p = EmbeddingProvider({"python": vec})
    p.to_file(tmp_path / "e.tsv")
    q = EmbeddingProvider.from_file(tmp_path / "e.tsv")
    assert np.array_equal(q.embed("python"), vec)
    assert q.backend == "file"


def test_hash_fallback_unit_norm():
    p = EmbeddingProvider(dimension=64)
    assert p.backend == "hash"
    assert abs(np.linalg.norm(p.embed("recursion")) - 1.0) < 1e-9


def test_multiword_mean_of_tokens():
    p = EmbeddingProvider({"deep": np.array([1.0, 0.0]), "learning": np.array([0.0, 1.0])})
    assert np.allclose(p.embed("deep learning"), [0.5, 0.5])


def test_omega_cases():
    p = EmbeddingProvider({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]),
                           "c": np.array([math.sqrt(2) / 2, math.sqrt(2) / 2])})
    assert p.omega("python", "python") == pytest.approx(1.0, abs=1e-12)
    assert p.omega("a", "b") == 0.0
    assert p.omega("a", "c") == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_bad_rows(tmp_path):
    f = tmp_path / "e.tsv"
    f.write_text("dimension=2\nx\t1 2 3\n")
    with pytest.raises(ValueError, match="expected 2"):
        EmbeddingProvider.from_file(f)
    with pytest.raises(ValueError):
        EmbeddingProvider({"x": np.array([np.nan, 1.0])})
    with pytest.raises(ValueError):
        EmbeddingProvider().embed("   ")


def test_zero_vector_cosine_is_zero():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    assert np.all(cosine_matrix(np.zeros((1, 3)), np.ones((2, 3))) == 0.0)


phrases = st.text(alphabet="abcdefgh ", min_size=1, max_size=12).filter(lambda s: s.strip())


@settings(max_examples=100, deadline=None)
@given(phrases, phrases)
def test_omega_symmetric_and_bounded(a, b):
    p = EmbeddingProvider(dimension=16)
    w = p.omega(a, b)
    assert w == p.omega(b, a)
    assert -1.0 <= w <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(phrases, min_size=1, max_size=6))
def test_cache_transparent(items):
    a, b = EmbeddingProvider(dimension=8), EmbeddingProvider(dimension=8, memoize=False)
    for ph in items + items:
        assert np.array_equal(a.embed(ph), b.embed(ph))
