import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from prereqrec import neural as nn
from prereqrec import pdrs
from prereqrec.evaluation import regression_metrics
from prereqrec.prereq import PrerequisiteGraph


def chain_graph(n_chains=3, length=8, fwd=0.9, back=0.1):
    src, dst, score = [], [], []
    for c in range(n_chains):
        base = c * length
        for k in range(length - 1):
            src += [base + k, base + k + 1]
            dst += [base + k + 1, base + k]
            score += [fwd, back]
    nodes = [f"c{k}" for k in range(n_chains * length)]
    return PrerequisiteGraph(nodes, np.array(src), np.array(dst), np.array(score, float))


def toy_data(n_users=6, n_items=5, n_concepts=4, seed=0, **kw):
    rng = np.random.default_rng(seed)
    users = np.repeat(np.arange(n_users), 2)
    items = rng.integers(0, n_items, len(users))
    known = np.unique(users * n_items + items)
    states = {u: type("S", (), {"prior": {u % n_concepts}, "target": {(u + 1) % n_concepts}})()
              for u in range(n_users)}
    item_concepts = {v: {v % n_concepts, (v + 2) % n_concepts} for v in range(n_items)}
    ctx = pdrs.Contexts.build(states, item_concepts, n_users, n_items, n_concepts)
    return pdrs.RecData(n_users, n_items, users, items, known, ctx, n_concepts, **kw)


def small_model(switches=(True, True, True), d=4, dc=3, seed=0, data=None):
    data = data or toy_data()
    rng = np.random.default_rng(seed)
    U = rng.normal(0, 0.1, (data.n_users, d))
    V = rng.normal(0, 0.1, (data.n_items, d))
    C = rng.normal(0, 0.1, (data.n_concepts, dc))
    head = nn.mlp(pdrs.PdrsModel.input_dim(d, dc, switches), 3, 8, seed=seed)
    return pdrs.PdrsModel(U, V, head, C, data.contexts, *switches)


def test_switches_off_matches_bem_layout():
    data = toy_data()
    off = small_model((False, False, False), data=data)
    assert off.head.in_dim == 2 * off.d
    bem_head = nn.mlp(2 * off.d, 3, 8, seed=0)
    assert off.head.n_params() == bem_head.n_params()
    assert off.inputs(np.array([0]), np.array([1])).shape == (1, 2 * off.d)


@pytest.mark.parametrize("switches", [(True, False, False), (False, True, True), (True, True, True)])
def test_head_input_dim(switches):
    m = small_model(switches)
    assert m.head.in_dim == 2 * 4 + sum(switches) * 3
    with pytest.raises(ValueError, match="head expects"):
        pdrs.PdrsModel(m.user_emb, m.item_emb, nn.mlp(5, 2), m.concept_emb, m.contexts, *switches)


def test_zero_head_scores_half():
    m = small_model()
    for layer in m.head.layers:
        layer.W[:] = 0
        layer.b[:] = 0
    assert np.all(m.score(np.arange(6), np.arange(6) % 5) == 0.5)


def test_unknown_id_raises():
    with pytest.raises(IndexError):
        small_model().predict(99, 0)


def test_pooling_set_semantics():
    a = pdrs.pooling_matrix({0: [2, 2, 1]}, 1, 4).toarray()
    b = pdrs.pooling_matrix({0: [1, 2]}, 1, 4).toarray()
    assert np.array_equal(a, b)
    C = np.random.default_rng(0).normal(size=(4, 3))
    single = pdrs.pooling_matrix({0: [3]}, 1, 4)
    assert np.array_equal((single @ C)[0], C[3])
    assert np.all(pdrs.pooling_matrix({}, 2, 4).toarray() == 0)  # empty set -> zero vector


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_pooling_permutation_invariant(concepts, rnd):
    shuffled = list(concepts)
    rnd.shuffle(shuffled)
    C = np.random.default_rng(1).normal(size=(8, 3))
    a = pdrs.pooling_matrix({0: concepts}, 1, 8) @ C
    b = pdrs.pooling_matrix({0: shuffled}, 1, 8) @ C
    assert np.allclose(a, b, atol=1e-15, rtol=0)


def test_kem_rescaled_preserves_predictions():
    kem = pdrs.init_kem(10, pdrs.KemConfig(dim=6, layers=3, hidden=8), seed=2)
    kem.concept_emb *= 0.05
    out = kem.rescaled(0.1)
    src, dst = np.arange(9), np.arange(1, 10)
    assert np.allclose(out.predict(src, dst), kem.predict(src, dst), atol=1e-12)
    assert np.sqrt(np.mean(out.concept_emb ** 2)) == pytest.approx(0.1, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 0.5))
def test_kem_holdout_keeps_mirrors(seed, frac):
    g = chain_graph(2, 6)
    train, test = pdrs.kem_holdout(g, frac, seed)
    assert not set(train.tolist()) & set(test.tolist())
    assert len(train) + len(test) == len(g)
    held = {(int(g.src[e]), int(g.dst[e])) for e in test}
    for a, b in held:
        assert (b, a) not in held


def ordered_chains(n_chains, length, fwd=0.9):
    """Every ordered pair inside each chain: earlier -> later scores fwd, the reverse 1 - fwd."""
    src, dst, score = [], [], []
    for c in range(n_chains):
        for a in range(length):
            for b in range(length):
                if a != b:
                    src.append(c * length + a)
                    dst.append(c * length + b)
                    score.append(fwd if a < b else 1 - fwd)
    nodes = [f"c{k}" for k in range(n_chains * length)]
    return PrerequisiteGraph(nodes, np.array(src), np.array(dst), np.array(score, float))


def test_kem_constant_graph():
    g = chain_graph(3, 8, fwd=0.5, back=0.5)
    res = pdrs.train_kem(g, pdrs.KemConfig(epochs=100), seed=0)
    assert res.rmse < 0.01


def test_kem_chain_graph_fits():
    # held-out edges are only predictable from chain order, so a single seed is noisy
    g = ordered_chains(40, 5)
    results = [pdrs.train_kem(g, pdrs.KemConfig(), seed=s) for s in range(3)]
    assert np.mean([r.rmse for r in results]) < 0.1
    assert all(r.losses[-1] < 0.1 * r.losses[0] for r in results)


def test_kem_bad_dim():
    with pytest.raises(ValueError):
        pdrs.train_kem(chain_graph(), pdrs.KemConfig(dim=0))


def test_r2_hand_fixture():
    # targets mean 2.5, SST = 5; residuals (0.5, -0.5, 0, 0) -> SSE 0.5
    rmse, r2 = regression_metrics([1.5, 1.5, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    assert r2 == pytest.approx(1 - 0.5 / 5, abs=1e-12)
    assert rmse == pytest.approx(np.sqrt(0.5 / 4), abs=1e-12)


def test_zero_rec_weight_reduces_to_kem():
    g = chain_graph(2, 6)
    cfg = pdrs.KemConfig(dim=4, layers=2, hidden=8, epochs=5, batch=7, holdout=0.2)
    ref = pdrs.train_kem(g, cfg, seed=3, n_concepts=12)
    kem = pdrs.init_kem(12, cfg, 3)
    data = toy_data(n_concepts=12, edges=g)
    d = 4
    U, V = np.zeros((data.n_users, d)), np.zeros((data.n_items, d))
    head = nn.mlp(pdrs.PdrsModel.input_dim(d, cfg.dim, (True, True, True)), 2, 8)
    model = pdrs.PdrsModel(U, V, head, kem.concept_emb, data.contexts, kem=kem)
    pdrs.fit_recommender(model, data, epochs=cfg.epochs, lr=cfg.lr, batch_kem=cfg.batch, patience=0, seed=3,
                         rec_weight=0.0, kem_holdout_frac=cfg.holdout, kem_decay=cfg.weight_decay)
    assert np.array_equal(model.concept_emb, ref.model.concept_emb)
    assert all(np.array_equal(a, b) for a, b in zip(model.kem.head.params(), ref.model.head.params()))


def test_single_user_single_item_degenerates():
    data = pdrs.RecData(1, 1, np.array([0]), np.array([0]), np.array([0]))
    model, log = pdrs.train_bem(data, pdrs.BemConfig(dim=4, layers=2, hidden=4, epochs=3), seed=0)
    assert len(log.epochs) == 3
    assert all(np.isfinite(e["rec_loss"]) for e in log.epochs)


def test_sample_negatives_avoids_known():
    rng = np.random.default_rng(0)
    known = np.array([0 * 5 + 1, 0 * 5 + 2, 1 * 5 + 0])
    u, v = pdrs.sample_negatives(np.array([0, 1]), 5, known, 20, rng)
    assert len(u) == 40
    assert not np.isin(u * 5 + v, known).any()


def two_block(n_per=20, n_items=20, seed=0):
    rng = np.random.default_rng(seed)
    half = n_items // 2
    train_u, train_v, held = [], [], {}
    for u in range(2 * n_per):
        block = np.arange(half) if u < n_per else np.arange(half, n_items)
        picks = rng.permutation(block)
        train_u += [u] * (half - 2)
        train_v += picks[:half - 2].tolist()
        held[u] = picks[half - 2:]
    tu, tv = np.array(train_u), np.array(train_v)
    return pdrs.RecData(2 * n_per, n_items, tu, tv, np.unique(tu * n_items + tv)), held


def test_bem_two_blocks():
    data, held = two_block()
    cfg = pdrs.BemConfig(dim=16, layers=2, hidden=16, epochs=40, patience=0)
    model, _ = pdrs.train_bem(data, cfg, seed=0)
    wins = 0
    for u, items in held.items():
        out_block = np.arange(10, 20) if u < 20 else np.arange(10)
        s_in = model.score(np.full(len(items), u), items)
        s_out = model.score(np.full(10, u), out_block)
        wins += s_in.min() > s_out.max()
    assert wins / len(held) >= 0.9


def test_bem_deterministic():
    data, _ = two_block(n_per=5, n_items=10)
    cfg = pdrs.BemConfig(dim=4, layers=2, hidden=4, epochs=3, patience=0)
    a = pdrs.train_bem(data, cfg, seed=1)[1].epochs[-1]["rec_loss"]
    b = pdrs.train_bem(data, cfg, seed=1)[1].epochs[-1]["rec_loss"]
    assert a == b


def test_switch_without_contexts_raises():
    data = toy_data()
    bare = pdrs.RecData(data.n_users, data.n_items, data.train_users, data.train_items, data.known)
    with pytest.raises(ValueError, match="context"):
        pdrs.train_pdrs(bare, pdrs.PdrsConfig(pretrain=False, epochs=1))


def test_empty_context_warns(caplog):
    data = toy_data()
    data.contexts = pdrs.Contexts(sp.csr_matrix((6, 4)), data.contexts.target, data.contexts.item)
    cfg = pdrs.PdrsConfig(pretrain=False, epochs=1, layers=2, hidden=4)
    with caplog.at_level("WARNING"):
        pdrs.train_pdrs(data, cfg, pdrs.KemConfig(dim=4), pdrs.BemConfig(dim=4), seed=0)
    assert "prior" in caplog.text


def test_model_roundtrip(tmp_path):
    data = toy_data(n_concepts=12, edges=chain_graph(2, 6))
    cfg = pdrs.PdrsConfig(pretrain=False, epochs=2, layers=2, hidden=8)
    model, _ = pdrs.train_pdrs(data, cfg, pdrs.KemConfig(dim=4, layers=2, hidden=8), pdrs.BemConfig(dim=4), seed=0)
    model.save(tmp_path / "m.npz")
    back = pdrs.PdrsModel.load(tmp_path / "m.npz")
    u, v = np.repeat(np.arange(6), 5), np.tile(np.arange(5), 6)
    assert np.array_equal(model.score(u, v), back.score(u, v))
    assert back.switches == model.switches
    assert np.array_equal(back.kem.predict(np.arange(5), np.arange(1, 6)),
                          model.kem.predict(np.arange(5), np.arange(1, 6)))


def test_substitution_noop_for_warm():
    m = small_model()
    u, v = np.arange(6), np.arange(6) % 5
    assert np.array_equal(m.score(u, v), m.score(u, v, substitute_cold=True))
