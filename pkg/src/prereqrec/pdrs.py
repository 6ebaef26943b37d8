"""KEM / BEM pretraining and the context-pooled PDRS recommender with joint training."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import neural
from .evaluation import evaluate, regression_metrics
from .neural import AdamState, DenseNet, backward, forward, grad_bce, grad_mse, loss_bce, loss_mse, step_adam

log = logging.getLogger(__name__)

EMBED_STD = 0.1


@dataclass
class KemConfig:
    dim: int = 64
    layers: int = 4
    hidden: int = 64
    epochs: int = 500
    lr: float = 1e-3
    batch: int = 256
    holdout: float = 0.1
    weight_decay: float = 3e-4  # L2 on the concept table


@dataclass
class BemConfig:
    dim: int = 128
    layers: int = 4
    hidden: int = 64
    negatives: int = 4
    epochs: int = 50
    lr: float = 3e-3
    batch: int = 256
    patience: int = 5
    min_epochs: int = 10  # patience only counts after this many epochs
    weight_decay: float = 1e-2  # L2 on the user/item tables


@dataclass
class PdrsConfig:
    layers: int = 4
    hidden: int = 64
    epochs: int = 50
    lr: float = 3e-3
    batch_rec: int = 256
    batch_kem: int = 256
    negatives: int = 4
    patience: int = 5
    min_epochs: int = 10
    pretrain: bool = True
    use_prior: bool = True
    use_target: bool = True
    use_item: bool = True
    rec_weight: float = 1.0
    kem_weight: float = 1.0
    weight_decay: float = 1e-2  # L2 on the user/item tables


# -- contexts ---------------------------------------------------------------

def pooling_matrix(sets: dict, n_rows: int, n_concepts: int) -> sp.csr_matrix:
    """Row-normalized membership matrix: row r averages the concepts in ``sets[r]``."""
    rows, cols, vals = [], [], []
    for r, concepts in sets.items():
        uniq = sorted(set(concepts))
        for c in uniq:
            rows.append(r)
            cols.append(c)
            vals.append(1.0 / len(uniq))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_concepts))


@dataclass
class Contexts:
    prior: sp.csr_matrix
    target: sp.csr_matrix
    item: sp.csr_matrix

    @classmethod
    def build(cls, states: dict, item_concepts: dict, n_users: int, n_items: int, n_concepts: int) -> "Contexts":
        return cls(pooling_matrix({u: s.prior for u, s in states.items()}, n_users, n_concepts),
                   pooling_matrix({u: s.target for u, s in states.items()}, n_users, n_concepts),
                   pooling_matrix(item_concepts, n_items, n_concepts))

    @classmethod
    def empty(cls, n_users, n_items, n_concepts=0) -> "Contexts":
        return cls(sp.csr_matrix((n_users, n_concepts)), sp.csr_matrix((n_users, n_concepts)),
                   sp.csr_matrix((n_items, n_concepts)))


# -- KEM --------------------------------------------------------------------

@dataclass
class KemModel:
    concept_emb: np.ndarray
    head: DenseNet

    def inputs(self, src, dst):
        return np.hstack([self.concept_emb[src], self.concept_emb[dst]])

    def predict(self, src, dst) -> np.ndarray:
        return forward(self.head, self.inputs(src, dst))[0][:, 0]

    def rescaled(self, rms: float = EMBED_STD) -> "KemModel":
        """Copy with the table at the given RMS and the head's first layer compensating.

        Predictions are unchanged; this only undoes the shrinkage weight decay
        leaves on the table, so downstream consumers see init-scale inputs.
        """
        cur = float(np.sqrt(np.mean(self.concept_emb ** 2)))
        head = self.head.copy()
        if cur <= 0:
            return KemModel(self.concept_emb.copy(), head)
        s = rms / cur
        head.layers[0].W = head.layers[0].W / s
        return KemModel(self.concept_emb * s, head)


@dataclass
class KemResult:
    model: KemModel
    rmse: float
    r2: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    losses: list = field(default_factory=list)


def init_kem(n_concepts: int, cfg: KemConfig, seed: int) -> KemModel:
    if cfg.dim <= 0:
        raise ValueError("KEM dimension must be positive")
    rng = np.random.default_rng([seed, 11])
    table = rng.normal(0.0, EMBED_STD, size=(n_concepts, cfg.dim))
    head = neural.mlp(2 * cfg.dim, cfg.layers, cfg.hidden, "sigmoid", seed=seed * 1000 + 12)
    return KemModel(table, head)


def kem_holdout(graph, frac: float, seed: int):
    """(train, test) edge indices with ``frac`` of the edges held out.

    Both directions of a concept pair are never held out together, so every
    held-out edge keeps its mirror (when the graph has one) in training.
    """
    n_edges = len(graph)
    if frac <= 0 or n_edges < 2:
        return np.arange(n_edges), np.zeros(0, dtype=np.int64)
    perm = np.random.default_rng([seed, 13]).permutation(n_edges)
    n_test = max(1, int(round(frac * n_edges)))
    where = {(a, b): k for k, (a, b) in enumerate(zip(graph.src.tolist(), graph.dst.tolist()))}
    test: set = set()
    for e in perm.tolist():
        if len(test) == n_test:
            break
        if where.get((int(graph.dst[e]), int(graph.src[e]))) not in test:
            test.add(e)
    test_idx = np.array(sorted(test), dtype=np.int64)
    return np.setdiff1d(np.arange(n_edges), test_idx), test_idx


def kem_step(model: KemModel, opt: AdamState, src, dst, target, lr: float, weight: float = 1.0,
             weight_decay: float = 0.0) -> float:
    X = model.inputs(src, dst)
    pred, tape = forward(model.head, X)
    loss = loss_mse(pred[:, 0], target)
    grads, dX = backward(model.head, tape, weight * grad_mse(pred, target[:, None]))
    d = model.concept_emb.shape[1]
    dC = np.zeros_like(model.concept_emb)
    np.add.at(dC, src, dX[:, :d])
    np.add.at(dC, dst, dX[:, d:])
    if weight_decay:
        dC += weight * weight_decay * model.concept_emb
    step_adam([model.concept_emb, *model.head.params()], [dC, *grads], opt, lr)
    return loss


def train_kem(graph, cfg: KemConfig | None = None, seed: int = 0, n_concepts: int | None = None) -> KemResult:
    """Fits concept embeddings so that the head reproduces each edge's PKL score.

    A ``cfg.holdout`` share of edges is held out for RMSE / R2.
    """
    cfg = cfg or KemConfig()
    if len(graph) == 0:
        raise ValueError("prerequisite graph has no edges")
    n_concepts = n_concepts or len(graph.nodes)
    model = init_kem(n_concepts, cfg, seed)
    train_idx, test_idx = kem_holdout(graph, cfg.holdout, seed)
    opt = AdamState()
    rng = np.random.default_rng([seed, 14])
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for s in range(math.ceil(len(order) / cfg.batch)):
            b = order[s * cfg.batch:(s + 1) * cfg.batch]
            total += kem_step(model, opt, graph.src[b], graph.dst[b], graph.score[b], cfg.lr,
                              weight_decay=cfg.weight_decay) * len(b)
        losses.append(total / max(1, len(order)))
        log.debug("kem epoch=%d mse=%.6g", epoch, losses[-1])
    rmse, r2 = float("nan"), float("nan")
    if len(test_idx) >= 2:
        rmse, r2 = regression_metrics(model.predict(graph.src[test_idx], graph.dst[test_idx]),
                                      graph.score[test_idx])
    log.info("kem done rmse=%.4f r2=%.4f", rmse, r2)
    return KemResult(model, rmse, r2, train_idx, test_idx, losses)


# -- recommender ------------------------------------------------------------

class PdrsModel:
    """MLP over [u, v, avg(prior), avg(target), avg(item concepts)].

    Disabled contexts take no input slot, so with every switch off this is
    the plain user/item model used for BEM.
    """

    def __init__(self, user_emb, item_emb, head: DenseNet, concept_emb=None, contexts: Contexts | None = None,
                 use_prior=True, use_target=True, use_item=True, kem: KemModel | None = None):
        self.user_emb = user_emb
        self.item_emb = item_emb
        self.head = head
        self.concept_emb = concept_emb if concept_emb is not None else (kem.concept_emb if kem else None)
        self.contexts = contexts
        self.switches = (bool(use_prior), bool(use_target), bool(use_item))
        if any(self.switches) and (self.concept_emb is None or contexts is None):
            raise ValueError("context switches need a concept table and contexts")
        self.kem = kem
        if kem is not None:
            kem.concept_emb = self.concept_emb
        expected = self.input_dim(user_emb.shape[1], 0 if self.concept_emb is None else self.concept_emb.shape[1],
                                  self.switches)
        if head.in_dim != expected:
            raise ValueError(f"head expects {head.in_dim} inputs but the layout needs {expected}")
        self.warm_users = np.ones(len(user_emb), dtype=bool)
        self.warm_items = np.ones(len(item_emb), dtype=bool)

    @staticmethod
    def input_dim(d: int, d_concept: int, switches) -> int:
        return 2 * d + sum(switches) * d_concept

    @property
    def d(self) -> int:
        return self.user_emb.shape[1]

    def _slots(self):
        c = self.contexts
        out = []
        if self.switches[0]:
            out.append(("user", c.prior))
        if self.switches[1]:
            out.append(("user", c.target))
        if self.switches[2]:
            out.append(("item", c.item))
        return out

    def inputs(self, users, items, user_vecs=None, item_vecs=None):
        U = self.user_emb[users] if user_vecs is None else user_vecs
        V = self.item_emb[items] if item_vecs is None else item_vecs
        parts = [U, V]
        for side, M in self._slots():
            parts.append(M[users if side == "user" else items] @ self.concept_emb)
        return np.hstack(parts)

    def _check_ids(self, users, items):
        if len(users) and (users.min() < 0 or users.max() >= len(self.user_emb)):
            raise IndexError("unknown user id")
        if len(items) and (items.min() < 0 or items.max() >= len(self.item_emb)):
            raise IndexError("unknown item id")

    def score(self, users, items, substitute_cold: bool = False, batch: int = 65536) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check_ids(users, items)
        out = np.empty(len(users))
        for s in range(0, len(users), batch):
            u, v = users[s:s + batch], items[s:s + batch]
            uv = iv = None
            if substitute_cold:
                uv = self.user_emb[u].copy()
                iv = self.item_emb[v].copy()
                cu, ci = ~self.warm_users[u], ~self.warm_items[v]
                if cu.any():
                    uv[cu] = self.user_emb[self.warm_users].mean(axis=0)
                if ci.any():
                    iv[ci] = self.item_emb[self.warm_items].mean(axis=0)
            out[s:s + batch] = forward(self.head, self.inputs(u, v, uv, iv))[0][:, 0]
        return out

    __call__ = score

    def predict(self, user: int, item: int, substitute_cold: bool = False) -> float:
        return float(self.score(np.array([user]), np.array([item]), substitute_cold)[0])

    def contextless_cold(self, tasks, mode: str) -> int:
        """Number of cold entities in ``tasks`` whose enabled contexts are all empty."""
        if mode == "cold-user":
            ids = {t.user for t in tasks if not self.warm_users[t.user]}
            mats = [m for side, m in self._slots() if side == "user"] if self.contexts else []
        else:
            ids = {t.positive for t in tasks if not self.warm_items[t.positive]}
            mats = [m for side, m in self._slots() if side == "item"] if self.contexts else []
        return sum(1 for e in ids if all(m[e].nnz == 0 for m in mats))

    def rec_params(self):
        ps = [self.user_emb, self.item_emb]
        if self.concept_emb is not None and any(self.switches):
            ps.append(self.concept_emb)
        return ps + self.head.params()

    def snapshot(self):
        return [p.copy() for p in self._all_params()]

    def restore(self, snap):
        for p, s in zip(self._all_params(), snap):
            p[...] = s

    def _all_params(self):
        ps = [self.user_emb, self.item_emb, *self.head.params()]
        if self.concept_emb is not None:
            ps.append(self.concept_emb)
        if self.kem is not None:
            ps.extend(self.kem.head.params())
        return ps

    # checkpoint
    def to_arrays(self):
        arrays = {"user_emb": self.user_emb, "item_emb": self.item_emb,
                  "warm_users": self.warm_users, "warm_items": self.warm_items}
        a, head_meta = neural.net_to_arrays(self.head, "head")
        arrays.update(a)
        meta = {"head": head_meta, "switches": list(self.switches), "kem_head": None}
        if self.concept_emb is not None:
            arrays["concept_emb"] = self.concept_emb
        if self.kem is not None:
            a, meta["kem_head"] = neural.net_to_arrays(self.kem.head, "kem_head")
            arrays.update(a)
        if self.contexts is not None:
            for name in ("prior", "target", "item"):
                m = getattr(self.contexts, name).tocsr()
                arrays[f"ctx.{name}.data"] = m.data
                arrays[f"ctx.{name}.indices"] = m.indices
                arrays[f"ctx.{name}.indptr"] = m.indptr
                arrays[f"ctx.{name}.shape"] = np.array(m.shape)
        return arrays, meta

    @classmethod
    def from_arrays(cls, arrays, meta) -> "PdrsModel":
        head = neural.net_from_arrays(arrays, meta["head"], "head")
        contexts = None
        if "ctx.prior.data" in arrays:
            mats = {}
            for name in ("prior", "target", "item"):
                mats[name] = sp.csr_matrix((arrays[f"ctx.{name}.data"], arrays[f"ctx.{name}.indices"],
                                            arrays[f"ctx.{name}.indptr"]), shape=tuple(arrays[f"ctx.{name}.shape"]))
            contexts = Contexts(**mats)
        concept = arrays.get("concept_emb")
        kem = None
        if meta.get("kem_head"):
            kem = KemModel(concept, neural.net_from_arrays(arrays, meta["kem_head"], "kem_head"))
        model = cls(np.array(arrays["user_emb"]), np.array(arrays["item_emb"]), head,
                    None if concept is None else np.array(concept), contexts, *meta["switches"], kem=kem)
        model.warm_users = np.array(arrays["warm_users"], dtype=bool)
        model.warm_items = np.array(arrays["warm_items"], dtype=bool)
        return model

    def save(self, path, extra_meta: dict | None = None):
        arrays, meta = self.to_arrays()
        neural.save_arrays(path, arrays, {**meta, **(extra_meta or {})})

    @classmethod
    def load(cls, path) -> "PdrsModel":
        arrays, meta = neural.load_arrays(path)
        return cls.from_arrays(arrays, meta)


def save_kem(model: KemModel, path, extra_meta: dict | None = None):
    a, meta = neural.net_to_arrays(model.head, "head")
    a["concept_emb"] = model.concept_emb
    neural.save_arrays(path, a, {"head": meta, **(extra_meta or {})})


def load_kem(path) -> KemModel:
    arrays, meta = neural.load_arrays(path)
    return KemModel(np.array(arrays["concept_emb"]), neural.net_from_arrays(arrays, meta["head"], "head"))


@dataclass
class RecData:
    """Everything the recommender trains on.

    ``known`` holds ``user * n_items + item`` codes that must never be
    sampled as training negatives.
    """
    n_users: int
    n_items: int
    train_users: np.ndarray
    train_items: np.ndarray
    known: np.ndarray
    contexts: Contexts | None = None
    n_concepts: int = 0
    val_tasks: object = None
    edges: object = None  # PrerequisiteGraph for joint training
    substitute_cold: bool = False  # validation scores unseen ids through mean embeddings


def rec_data_from_split(split, contexts=None, n_concepts=0, known_pairs=None, val_tasks=None, edges=None) -> RecData:
    c = split.corpus
    tr = split.train
    if known_pairs is None:
        known_pairs = (c.users[tr], c.items[tr])
    ku, kv = known_pairs
    known = np.unique(np.asarray(ku, dtype=np.int64) * c.n_items + np.asarray(kv, dtype=np.int64))
    return RecData(c.n_users, c.n_items, c.users[tr].copy(), c.items[tr].copy(), known,
                   contexts, n_concepts, val_tasks, edges)


def sample_negatives(users, n_items: int, known: np.ndarray, k: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """k uniform negatives per entry of ``users`` avoiding ``known`` codes (rejection sampling)."""
    users = np.repeat(np.asarray(users, dtype=np.int64), k)
    if len(users) == 0 or k == 0:
        return users, np.zeros(0, dtype=np.int64)
    counts = np.bincount(known // n_items, minlength=users.max() + 1) if len(known) else np.zeros(users.max() + 1)
    full = counts[users] >= n_items
    if full.any():
        log.warning("%d user(s) have interacted with every item; no negatives sampled for them",
                    len(np.unique(users[full])))
        users = users[~full]
    items = rng.integers(0, n_items, size=len(users))
    for _ in range(1000):
        bad = np.isin(users * n_items + items, known)
        if not bad.any():
            break
        items[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return users, items


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("nan")
    seconds: float = 0.0


def rec_step(model: PdrsModel, opt: AdamState, users, items, labels, lr: float, weight: float = 1.0,
             weight_decay: float = 0.0) -> float:
    X = model.inputs(users, items)
    pred, tape = forward(model.head, X)
    loss = loss_bce(pred[:, 0], labels)
    grads, dX = backward(model.head, tape, weight * grad_bce(pred, labels[:, None]))
    d = model.d
    dU = weight * weight_decay * model.user_emb
    dV = weight * weight_decay * model.item_emb
    np.add.at(dU, users, dX[:, :d])
    np.add.at(dV, items, dX[:, d:2 * d])
    param_grads = [dU, dV]
    slots = model._slots()
    if model.concept_emb is not None and any(model.switches):
        dC = np.zeros_like(model.concept_emb)
        off = 2 * d
        dc = model.concept_emb.shape[1]
        for side, M in slots:
            rows = M[users if side == "user" else items]
            dC += rows.T @ dX[:, off:off + dc]
            off += dc
        param_grads.append(dC)
    step_adam(model.rec_params(), param_grads + grads, opt, lr)
    return loss


def epoch_instances(data: RecData, negatives: int, rng):
    nu, ni = sample_negatives(data.train_users, data.n_items, data.known, negatives, rng)
    users = np.concatenate([data.train_users, nu])
    items = np.concatenate([data.train_items, ni])
    labels = np.concatenate([np.ones(len(data.train_users)), np.zeros(len(nu))])
    order = rng.permutation(len(users))
    return users[order], items[order], labels[order]


def run_epoch(model: PdrsModel, data: RecData, rec_opt, kem_opt, rng_rec, rng_kem, kem_train_idx,
              lr: float, batch_rec: int, batch_kem: int, negatives: int,
              rec_weight: float = 1.0, kem_weight: float = 1.0, kem_decay: float = 0.0, rec_decay: float = 0.0):
    """One joint epoch: a recommendation batch, then a prerequisite batch, strictly alternating.

    Cost is O(|Y| + |R|): each instance and each edge is visited once.
    """
    users, items, labels = epoch_instances(data, negatives, rng_rec)
    nbY = math.ceil(len(users) / batch_rec)
    joint = model.kem is not None and data.edges is not None and kem_weight > 0
    order = rng_kem.permutation(kem_train_idx) if joint else np.zeros(0, dtype=np.int64)
    nbR = math.ceil(len(order) / batch_kem)
    rec_total = kem_total = 0.0
    g = data.edges
    for s in range(max(nbY, nbR)):
        if s < nbY and rec_weight > 0:
            sl = slice(s * batch_rec, (s + 1) * batch_rec)
            rec_total += rec_step(model, rec_opt, users[sl], items[sl], labels[sl], lr, rec_weight,
                                  rec_decay) * len(labels[sl])
        if s < nbR:
            b = order[s * batch_kem:(s + 1) * batch_kem]
            kem_total += kem_step(model.kem, kem_opt, g.src[b], g.dst[b], g.score[b], lr, kem_weight,
                                  kem_decay) * len(b)
    return rec_total / max(1, len(users)), kem_total / max(1, len(order))


def fit_recommender(model: PdrsModel, data: RecData, *, epochs: int, lr: float, batch_rec: int = 256,
                    batch_kem: int = 256, negatives: int = 4, patience: int = 5, min_epochs: int = 0,
                    seed: int = 0,
                    rec_weight: float = 1.0, kem_weight: float = 1.0, kem_holdout_frac: float = 0.1, kem_decay: float = 0.0,
                    rec_decay: float = 0.0,
                    tag: str = "pdrs") -> TrainLog:
    """Trains in place with early stopping on validation NDCG@10.

    ``patience <= 0`` disables early stopping; otherwise training halts once
    ``patience`` epochs pass without a new best (never before ``min_epochs``)
    and the best parameters are restored.
    """
    trained = np.zeros(data.n_users, dtype=bool)
    trained[data.train_users] = True
    model.warm_users = trained
    warm_items = np.zeros(data.n_items, dtype=bool)
    warm_items[data.train_items] = True
    model.warm_items = warm_items
    rng_rec = np.random.default_rng([seed, 21])
    rng_kem = np.random.default_rng([seed, 14])
    kem_train_idx = np.zeros(0, dtype=np.int64)
    if data.edges is not None and model.kem is not None:
        kem_train_idx, _ = kem_holdout(data.edges, kem_holdout_frac, seed)
    rec_opt, kem_opt = AdamState(), AdamState()
    logbook = TrainLog()
    best = None
    stale = 0
    t0 = time.perf_counter()
    early = patience > 0 and data.val_tasks is not None and len(data.val_tasks) > 0
    for epoch in range(epochs):
        rec_loss, kem_loss = run_epoch(model, data, rec_opt, kem_opt, rng_rec, rng_kem, kem_train_idx, lr,
                                       batch_rec, batch_kem, negatives, rec_weight, kem_weight, kem_decay,
                                       rec_decay)
        entry = {"epoch": epoch, "rec_loss": rec_loss, "kem_loss": kem_loss}
        if early:
            scorer = (lambda u, v: model.score(u, v, substitute_cold=True)) if data.substitute_cold else model.score
            val = evaluate(scorer, data.val_tasks, (10,)).get("NDCG", 10)
            entry["val_ndcg10"] = val
            if best is None or val > logbook.best_val:
                logbook.best_val, logbook.best_epoch, best = val, epoch, model.snapshot()
                stale = 0
            else:
                stale += 1
        logbook.epochs.append(entry)
        log.info("%s epoch=%d " % (tag, epoch) + " ".join(f"{k}={v:.6g}" for k, v in entry.items() if k != "epoch"))
        if early and stale >= patience and epoch + 1 >= min_epochs:
            break
    if early and best is not None:
        model.restore(best)
    logbook.seconds = time.perf_counter() - t0
    return logbook


def _user_item_tables(n_users, n_items, d, seed):
    rng = np.random.default_rng([seed, 31])
    return rng.normal(0.0, EMBED_STD, (n_users, d)), rng.normal(0.0, EMBED_STD, (n_items, d))


def train_bem(data: RecData, cfg: BemConfig | None = None, seed: int = 0):
    """User/item embeddings and an MLP head trained with BCE on sampled negatives."""
    cfg = cfg or BemConfig()
    U, V = _user_item_tables(data.n_users, data.n_items, cfg.dim, seed)
    head = neural.mlp(2 * cfg.dim, cfg.layers, cfg.hidden, "sigmoid", seed=seed * 1000 + 32)
    model = PdrsModel(U, V, head, use_prior=False, use_target=False, use_item=False)
    bare = RecData(data.n_users, data.n_items, data.train_users, data.train_items, data.known,
                   val_tasks=data.val_tasks, substitute_cold=data.substitute_cold)
    logbook = fit_recommender(model, bare, epochs=cfg.epochs, lr=cfg.lr, batch_rec=cfg.batch,
                              negatives=cfg.negatives, patience=cfg.patience, min_epochs=cfg.min_epochs, seed=seed,
                              rec_decay=cfg.weight_decay,
                              tag="bem")
    return model, logbook


def train_pdrs(data: RecData, cfg: PdrsConfig | None = None, kem_cfg: KemConfig | None = None,
               bem_cfg: BemConfig | None = None, seed: int = 0, kem: KemModel | None = None,
               bem: PdrsModel | None = None):
    """Builds and trains PDRS.

    With ``cfg.pretrain`` the user/item tables come from BEM and the concept
    table plus prerequisite head from KEM (trained here unless passed in);
    the recommendation head is always freshly initialized.
    """
    cfg = cfg or PdrsConfig()
    kem_cfg = kem_cfg or KemConfig()
    bem_cfg = bem_cfg or BemConfig()
    switches = (cfg.use_prior, cfg.use_target, cfg.use_item)
    n_concepts = data.n_concepts
    has_concepts = n_concepts > 0 and data.contexts is not None
    if any(switches) and not has_concepts:
        raise ValueError("context switches are on but no concept contexts were supplied")
    if has_concepts and any(switches):
        for name, on in zip(("prior", "target", "item"), switches):
            if on and getattr(data.contexts, name).nnz == 0:
                log.warning("context %s is enabled but empty for every row; zero vectors used", name)

    if cfg.pretrain:
        if bem is None:
            bem, _ = train_bem(data, bem_cfg, seed)
        U, V = bem.user_emb.copy(), bem.item_emb.copy()
        if has_concepts and kem is None and data.edges is not None and len(data.edges):
            kem = train_kem(data.edges, kem_cfg, seed, n_concepts).model
        if kem is not None:
            kem = kem.rescaled()
    else:
        U, V = _user_item_tables(data.n_users, data.n_items, bem_cfg.dim, seed)
        kem = init_kem(n_concepts, kem_cfg, seed) if has_concepts else None
    if kem is None and has_concepts:
        kem = init_kem(n_concepts, kem_cfg, seed)
    concept = kem.concept_emb if kem is not None else None
    d_concept = 0 if concept is None else concept.shape[1]
    in_dim = PdrsModel.input_dim(U.shape[1], d_concept, switches)
    head = neural.mlp(in_dim, cfg.layers, cfg.hidden, "sigmoid", seed=seed * 1000 + 41)
    model = PdrsModel(U, V, head, concept, data.contexts if has_concepts else None, *switches,
                      kem=kem if data.edges is not None else None)
    logbook = fit_recommender(model, data, epochs=cfg.epochs, lr=cfg.lr, batch_rec=cfg.batch_rec,
                              batch_kem=cfg.batch_kem, negatives=cfg.negatives, patience=cfg.patience,
                              min_epochs=cfg.min_epochs,
                              seed=seed, rec_weight=cfg.rec_weight, kem_weight=cfg.kem_weight,
                              kem_holdout_frac=kem_cfg.holdout, kem_decay=kem_cfg.weight_decay,
                              rec_decay=cfg.weight_decay)
    return model, logbook
