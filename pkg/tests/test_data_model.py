import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_corpus
from prereqrec import data as dm

HEADER = "user\titem\trating\ttimestamp\n"


def test_load_counts(write):
    inter = write("i.tsv", HEADER + "a\tx\t5\t1\na\ty\t2\t2\nb\tx\t4\t1\n")
    docs = write("d.tsv", "x\tpython/N\tthe/O python/N\ny\tlogic/N\tlogic/N\n")
    c = dm.load_corpus(inter, docs)
    assert (c.n_users, c.n_items, len(c)) == (2, 2, 3)
    assert c.documents[c.item_index()["x"]].title_tokens[0] == dm.Token("python", "N")


def test_empty_interactions(write):
    with pytest.raises(dm.DataError, match="no interactions"):
        dm.load_corpus(write("i.tsv", HEADER))


def test_bad_timestamp_names_line(write):
    p = write("i.tsv", HEADER + "a\tx\t5\t1\na\ty\t5\tnoon\n")
    with pytest.raises(dm.DataError, match=r"i\.tsv:3"):
        dm.load_corpus(p)


def test_unknown_column_strict_and_lenient(write):
    p = write("i.tsv", "user\titem\trating\ttimestamp\tdevice\na\tx\t5\t1\tphone\n")
    with pytest.raises(dm.DataError, match="unknown column"):
        dm.load_corpus(p)
    assert len(dm.load_corpus(p, lenient=True)) == 1


def test_bad_pos_tag(write):
    inter = write("i.tsv", HEADER + "a\tx\t5\t1\n")
    docs = write("d.tsv", "x\tpython/Q\tthe/O\n")
    with pytest.raises(dm.DataError, match="POS"):
        dm.load_corpus(inter, docs)


def test_duplicate_interaction(write):
    p = write("i.tsv", HEADER + "a\tx\t5\t1\na\tx\t4\t1\n")
    with pytest.raises(dm.DataError, match="duplicate"):
        dm.load_corpus(p)


def test_implicit_threshold():
    c = make_corpus([(0, 0, 1, 1), (0, 1, 3, 2), (0, 2, 5, 3)])
    assert len(dm.to_implicit(c, 3)) == 2


def test_implicit_threshold_zero_is_identity():
    c = make_corpus([(0, 0, 4, 1), (1, 1, 3, 2)])
    out = dm.to_implicit(c, 0)
    assert np.array_equal(out.users, c.users) and np.array_equal(out.items, c.items)


def test_implicit_all_below():
    c = make_corpus([(0, 0, 1, 1), (0, 1, 2, 2)])
    pos = dm.to_implicit(c, 3)
    assert len(pos) == 0
    assert len(dm.filter_min_interactions(pos, 1)) == 0


def test_min_interactions():
    rows = [(0, k, 5, k) for k in range(3)] + [(1, k, 5, k) for k in range(5)]
    c = make_corpus(rows)
    out = dm.filter_min_interactions(c, 4)
    assert set(out.users.tolist()) == {1}
    assert len(dm.filter_min_interactions(c, 1)) == len(c)
    one = make_corpus([(0, k, 5, k) for k in range(5)])
    assert len(dm.filter_min_interactions(one, 4)) == 5


def _history(n):
    return make_corpus([(0, k, 5, k) for k in range(n)])


def test_knowledge_state_ten_items():
    c = _history(10)
    concepts = {k: {k} for k in range(10)}
    states, middle = dm.derive_knowledge_state(c, concepts, 0.3, 0.2)
    assert states[0].prior == {0, 1, 2}
    assert states[0].target == {8, 9}
    assert np.flatnonzero(middle).tolist() == [3, 4, 5, 6, 7]


def test_knowledge_state_four_items():
    c = _history(4)
    states, middle = dm.derive_knowledge_state(c, {k: {k} for k in range(4)}, 0.3, 0.2)
    assert states[0].prior == {0}
    assert states[0].target == frozenset()
    assert middle.sum() == 3


def test_knowledge_state_zero_fracs():
    c = _history(6)
    states, middle = dm.derive_knowledge_state(c, {k: {k} for k in range(6)}, 0.0, 0.0)
    assert all(s.contextless for s in states.values())
    assert middle.all()


def test_timestamp_ties_break_by_item():
    c = make_corpus([(0, 3, 5, 1), (0, 1, 5, 1), (0, 2, 5, 0)])
    order = c.items[c.histories()[0]].tolist()
    assert order == [2, 1, 3]


def test_histories_unsorted_rows():
    c = make_corpus([(1, 0, 5, 2), (0, 1, 5, 1), (1, 2, 5, 1), (0, 3, 5, 0)])
    h = c.histories()
    assert c.items[h[0]].tolist() == [3, 1]
    assert c.items[h[1]].tolist() == [2, 0]


@given(st.integers(0, 500))
def test_segments_disjoint(n):
    n_prior, n_target = dm.history_segments(n, 0.3, 0.2)
    prior = set(range(n_prior))
    target = set(range(n - n_target, n))
    middle = set(range(n_prior, n - n_target))
    assert not (prior & target) and not (prior & middle) and not (target & middle)
    assert prior | target | middle == set(range(n))
    assert n_prior == int(np.floor(0.3 * n + 1e-9))


def _random_corpus(seed, n_users=12, n_items=30):
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        items = rng.choice(n_items, size=int(rng.integers(1, 12)), replace=False)
        for t, v in enumerate(items):
            rows.append((u, int(v), float(rng.integers(1, 6)), int(t)))
    return make_corpus(rows, n_users=n_users, n_items=n_items)


def test_ratio_split_sizes():
    rows = [(u, k, 5, k) for u in range(10) for k in range(10)]
    s = dm.make_split(make_corpus(rows), "ratio-80-10-10", seed=3)
    assert (len(s.train), len(s.validation), len(s.test)) == (80, 10, 10)


def test_leave_one_out_takes_last():
    c = make_corpus([(0, 5, 5, 1), (0, 6, 5, 2), (0, 7, 5, 3)])
    s = dm.make_split(c, "leave-one-out")
    assert c.items[s.test].tolist() == [7]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(dm.SPLIT_MODES))
def test_split_properties(seed, mode):
    c = _random_corpus(seed)
    s = dm.make_split(c, mode, seed)
    again = dm.make_split(c, mode, seed)
    assert all(np.array_equal(getattr(s, p), getattr(again, p)) for p in ("train", "validation", "test"))
    parts = [set(s.train.tolist()), set(s.validation.tolist()), set(s.test.tolist())]
    assert not (parts[0] & parts[1]) and not (parts[0] & parts[2]) and not (parts[1] & parts[2])
    assert parts[0] | parts[1] | parts[2] == set(range(len(c)))
    if mode == "leave-one-out":
        for k in s.test:
            u = c.users[k]
            tr = s.train[c.users[s.train] == u]
            assert np.all(c.timestamps[tr] <= c.timestamps[k])
    if mode == "cold-user":
        assert not set(c.users[s.test].tolist()) & set(c.users[s.train].tolist())
    if mode == "cold-item":
        assert not set(c.items[s.test].tolist()) & set(c.items[s.train].tolist())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 6), st.floats(0, 6))
def test_implicit_monotone(seed, a, b):
    c = _random_corpus(seed)
    lo, hi = min(a, b), max(a, b)
    assert len(dm.to_implicit(c, hi)) <= len(dm.to_implicit(c, lo))
    out = dm.filter_min_interactions(dm.to_implicit(c, lo), 2)
    assert set(out.users.tolist()) <= set(c.users.tolist())
