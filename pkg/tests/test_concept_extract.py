import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import toks
from prereqrec import concepts as ce
from prereqrec.data import Document, Token
from prereqrec.embeddings import EmbeddingProvider

NP_ORACLE = re.compile(r"((A|N)+|(A|N)*(NP)?(A|N)*)N")


def dense_textrank(words, window=2, d=0.85, eps=1e-6, max_iter=100, exact=False):
    """Matrix form over the same co-occurrence graph; iterates or solves the linear system."""
    nodes = list(dict.fromkeys(words))
    pos = {w: k for k, w in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)))
    for i, w in enumerate(words):
        for other in words[i + 1:i + window]:
            if other != w:
                A[pos[w], pos[other]] = A[pos[other], pos[w]] = 1.0
    deg = A.sum(axis=0)
    M = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)  # column-stochastic over neighbours
    if exact:
        S = np.linalg.solve(np.eye(len(nodes)) - d * M, (1 - d) * np.ones(len(nodes)))
        return dict(zip(nodes, S))
    S = np.ones(len(nodes))
    for _ in range(max_iter):
        new = (1 - d) + d * M @ S
        delta = np.max(np.abs(new - S))
        S = new
        if delta < eps:
            break
    return dict(zip(nodes, S))


def title(words):
    return tuple(Token(w, "N") for w in words)


def test_two_words_symmetric():
    s = ce.textrank_scores(title(["graph", "theory"]))
    assert s["graph"] == s["theory"]
    assert set(ce.textrank_seeds(title(["graph", "theory"]), 1.0)) == {"graph", "theory"}


def test_keep_fraction_ceil():
    assert len(ce.textrank_seeds(title(["a", "b", "c", "d", "e"]), 0.5)) == 3


def test_empty_title():
    assert ce.textrank_seeds((), 0.5) == []
    assert ce.textrank_seeds(toks("of/P the/O"), 0.5) == []


def test_bad_keep_fraction():
    with pytest.raises(ValueError):
        ce.textrank_seeds(title(["a"]), 0.0)


def test_non_content_words_dropped():
    s = ce.textrank_scores(toks("intro/N to/P deep/A learning/N ./O"))
    assert set(s) == {"intro", "deep", "learning"}


words_st = st.lists(st.sampled_from(list("abcdefghijkl")), min_size=1, max_size=25)


@settings(max_examples=60, deadline=None)
@given(words_st)
def test_textrank_matches_dense_iteration(words):
    got = ce.textrank_scores(title(words))
    want = dense_textrank(words)
    assert set(got) == set(want)
    for w in got:
        assert abs(got[w] - want[w]) < 1e-8


@settings(max_examples=60, deadline=None)
@given(words_st)
def test_textrank_converges_to_fixed_point(words):
    got = ce.textrank_scores(title(words), eps=1e-13, max_iter=10_000)
    want = dense_textrank(words, exact=True)
    for w in got:
        assert abs(got[w] - want[w]) < 1e-8
    # same ranking as the exact solution
    order = lambda s: sorted(s, key=lambda w: (-round(s[w], 9), w))
    assert order(got) == order(want)


def tagged(tags):
    return tuple(Token(f"w{k}", t) for k, t in enumerate(tags))


def test_np_adjective_noun():
    assert ce.noun_phrase_candidates(toks("deep/A learning/N")) == ["deep learning"]


def test_np_bridged():
    assert ce.noun_phrase_candidates(toks("theory/N of/P computation/N")) == ["theory of computation"]


def test_np_preposition_alone():
    assert ce.noun_phrase_candidates(toks("of/P")) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("ANPO"), max_size=20))
def test_np_spans_against_regex(tags):
    spans = ce.noun_phrase_spans(tagged(tags))
    last = 0
    for i, j in spans:
        assert i >= last and j > i
        last = j
        assert NP_ORACLE.fullmatch("".join(tags[i:j]))
    # maximality: no span can be extended to the right and still match
    for i, j in spans:
        for k in range(j + 1, len(tags) + 1):
            assert not NP_ORACLE.fullmatch("".join(tags[i:k]))
    # nothing is missed: every N outside the spans would start no match
    covered = {k for i, j in spans for k in range(i, j)}
    for k, t in enumerate(tags):
        if t == "N":
            assert k in covered


def graph_of(phrases, sources, W):
    nodes = [ce.ConceptCandidate(p, s, 1.0 if s == "seed" else 0.0) for p, s in zip(phrases, sources)]
    return ce.PropagationGraph(nodes, np.asarray(W, float))


def test_propagate_no_edges():
    g = graph_of(["a", "b", "c"], ["seed", "candidate", "candidate"],
                 [[0, .9, .3], [.9, 0, .2], [.3, .2, 0]])
    s = ce.propagate(g, lam=1.0)
    assert s == {"a": 1.0, "b": 0.0, "c": 0.0}


def test_propagate_fixed_point():
    g = graph_of(["seed", "cand"], ["seed", "candidate"], [[0, .9], [.9, 0]])
    s = ce.propagate(g, lam=0.5, alpha=0.5, max_iters=200, eps=1e-12)
    # x = (1 - a) x + a * 0.9 * 1  ->  x = 0.9
    assert s["cand"] == pytest.approx(0.9, abs=1e-9)
    assert s["seed"] == 1.0


def test_propagate_bad_params():
    g = graph_of(["a"], ["seed"], [[0]])
    with pytest.raises(ValueError):
        ce.propagate(g, lam=1.5)
    with pytest.raises(ValueError):
        ce.propagate(g, alpha=1.0)


def _random_graph(seed, n):
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1, 1, (n, n))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 0)
    sources = ["seed" if rng.random() < 0.3 else "candidate" for _ in range(n)]
    return [f"p{k}" for k in range(n)], sources, W, rng


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10), st.floats(-1, 1))
def test_propagate_permutation_and_range(seed, n, lam):
    phrases, sources, W, rng = _random_graph(seed, n)
    s = ce.propagate(graph_of(phrases, sources, W), lam=lam)
    perm = rng.permutation(n)
    s2 = ce.propagate(graph_of([phrases[k] for k in perm], [sources[k] for k in perm], W[np.ix_(perm, perm)]),
                      lam=lam)
    for p in phrases:
        assert s[p] == pytest.approx(s2[p], abs=1e-12)
        assert 0.0 <= s[p] <= 1.0
    for p, src in zip(phrases, sources):
        if src == "seed":
            assert s[p] == 1.0


def _provider():
    e = np.eye(4)
    near = 0.95 * e[0] + math.sqrt(1 - 0.95 ** 2) * e[1]
    far = 0.05 * e[0] + math.sqrt(1 - 0.05 ** 2) * e[2]
    return EmbeddingProvider({"python": e[0], "generator": near, "pottery": far, "of": e[3]})


def test_extract_empty_content_seeds_only():
    doc = Document(0, toks("python/N"), ())
    assert ce.extract_item_concepts(doc, _provider()) == {"python": 1.0}


def test_extract_near_passes_far_fails():
    doc = Document(0, toks("python/N"), toks("the/O generator/N and/O pottery/N"))
    got = ce.extract_item_concepts(doc, _provider())
    assert "generator" in got and "pottery" not in got
    assert got["generator"] == pytest.approx(0.95, abs=1e-4)


def test_candidate_equal_to_seed_interned_once():
    docs = {0: Document(0, toks("Python/N"), toks("python/N"))}
    vocab, scores = ce.extract_corpus_concepts(docs, _provider())
    assert vocab.phrases == ["python"]
    assert scores == {0: {0: 1.0}}


def test_extract_deterministic():
    doc = Document(0, toks("python/N generator/N"), toks("the/O generator/N of/P pottery/N"))
    p = _provider()
    assert ce.extract_item_concepts(doc, p) == ce.extract_item_concepts(doc, EmbeddingProvider(p.table))


def test_item_concepts_roundtrip(tmp_path):
    docs = {0: Document(0, toks("python/N"), toks("generator/N")), 1: Document(1, toks("pottery/N"), ())}
    vocab, scores = ce.extract_corpus_concepts(docs, _provider())
    path = tmp_path / "ic.tsv"
    ce.write_item_concepts(path, ("a", "b"), vocab, scores)
    vocab2, scores2 = ce.read_item_concepts(path, {"a": 0, "b": 1})
    named = lambda v, s: {i: {v.phrases[c]: x for c, x in d.items()} for i, d in s.items()}
    assert named(vocab, scores) == named(vocab2, scores2)
