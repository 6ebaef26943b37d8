"""Prerequisite signals (omega, AsyD, RefD), the PKL logistic fusion, and extraction metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .embeddings import EmbeddingProvider, cosine_matrix, normalize_phrase
from .neural import sigmoid

log = logging.getLogger(__name__)

FEATURES = ("omega", "asyd", "refd")
LABELS = (1, -1, 0)
SOFT_TARGET = {1: 1.0, 0: 0.5, -1: 0.0}


@dataclass
class PklConfig:
    smoothing_eps: float = 1e-12
    top_k: int = 20
    train_frac: float = 0.8
    lr: float = 1.0
    max_iter: int = 50000
    tol: float = 1e-9
    edge_threshold: float = 0.0
    refd_min_evidence: float = 0.05
    rd_theta: float = 0.15
    margin: float = -1.0  # < 0: tune on the training annotations
    features: str = "omega,asyd,refd"


# -- sequential co-occurrence -----------------------------------------------

def phrase_count(tokens: list[str], phrase: list[str]) -> int:
    n, m = len(tokens), len(phrase)
    return sum(1 for i in range(n - m + 1) if tokens[i:i + m] == phrase)


def term_frequencies(documents: dict, item_concepts: dict, phrases: list[str], n_items: int) -> sp.csr_matrix:
    """items x concepts matrix of phrase occurrence counts in title + content.

    Only an item's own extracted concepts get an entry; an extracted
    concept counts at least once even when normalization hides its surface.
    """
    rows, cols, vals = [], [], []
    for item, concepts in item_concepts.items():
        doc = documents.get(item)
        tokens = []
        if doc is not None:
            tokens = [normalize_phrase(t.surface) for t in (*doc.title_tokens, *doc.content_tokens)]
        for cid in concepts:
            rows.append(item)
            cols.append(cid)
            vals.append(max(1, phrase_count(tokens, phrases[cid].split())))
    return sp.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)), shape=(n_items, len(phrases)))


def cooccurrence_matrix(corpus, tf: sp.csr_matrix) -> sp.csr_matrix:
    """P[i, j] = sum_u sum_{ts(a) < ts(b)} tf(c_i, a) * tf(c_j, b)."""
    n_c = tf.shape[1]
    total = sp.csr_matrix((n_c, n_c))
    for idx in corpus.histories().values():
        if len(idx) < 2:
            continue
        ts = corpus.timestamps[idx]
        F = tf[corpus.items[idx]]
        if F.nnz == 0:
            continue
        # earlier[b, a] = 1 when a strictly precedes b
        earlier = sp.csr_matrix((ts[None, :] < ts[:, None]).astype(np.float64))
        total = total + (earlier @ F).T @ F
    return total.tocsr()


def cooccurrence_prob(c_i: int, c_j: int, corpus, tf: sp.csr_matrix) -> float:
    return float(cooccurrence_matrix(corpus, tf)[c_i, c_j])


def asyd(p_ij, p_ji, smoothing_eps: float = 1e-12):
    """sigma((P_ij + eps) / (P_ji + eps) - 1); works elementwise on arrays."""
    if smoothing_eps <= 0:
        raise ValueError("smoothing_eps must be positive")
    ratio = (np.asarray(p_ij, float) + smoothing_eps) / (np.asarray(p_ji, float) + smoothing_eps)
    out = sigmoid(np.atleast_1d(ratio - 1.0))
    return float(out[0]) if np.ndim(p_ij) == 0 and np.ndim(p_ji) == 0 else out


# -- reference distance -----------------------------------------------------

@dataclass
class WikiRefCorpus:
    concepts: list[str]
    refs: sp.csr_matrix  # refs[i, j] = number of times t_i refers to t_j

    @classmethod
    def from_counts(cls, counts: dict) -> "WikiRefCorpus":
        names = sorted({normalize_phrase(a) for a, _ in counts} | {normalize_phrase(b) for _, b in counts})
        idx = {t: k for k, t in enumerate(names)}
        rows, cols, vals = [], [], []
        for (a, b), c in counts.items():
            if c < 0 or not math.isfinite(c):
                raise ValueError(f"bad reference count {c} for {a!r} -> {b!r}")
            rows.append(idx[normalize_phrase(a)])
            cols.append(idx[normalize_phrase(b)])
            vals.append(float(c))
        refs = sp.csr_matrix((vals, (rows, cols)), shape=(len(names), len(names)))
        return cls(names, refs)

    @classmethod
    def from_file(cls, path) -> "WikiRefCorpus":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"wiki reference file not found: {path}")
        counts = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or (lineno == 1 and line.split("\t")[:2] == ["t_i", "t_j"]):
                    continue
                parts = line.split("\t")
                try:
                    a, b, c = parts
                    counts[(a, b)] = counts.get((a, b), 0) + int(c)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected t_i<TAB>t_j<TAB>count") from None
        return cls.from_counts(counts)

    def index(self) -> dict[str, int]:
        return {t: k for k, t in enumerate(self.concepts)}

    def tau_matrix(self) -> sp.csr_matrix:
        both = (self.refs + self.refs.T).tocoo()
        both.eliminate_zeros()
        diff = (self.refs - self.refs.T).tocsr()
        vals = np.asarray(diff[both.row, both.col]).ravel() / both.data
        out = sp.csr_matrix((vals, (both.row, both.col)), shape=self.refs.shape)
        out.eliminate_zeros()
        return out


def tau(t_i: str, t_j: str, wiki: WikiRefCorpus) -> float:
    idx = wiki.index()
    a, b = idx.get(normalize_phrase(t_i)), idx.get(normalize_phrase(t_j))
    if a is None or b is None:
        return 0.0
    fwd, back = wiki.refs[a, b], wiki.refs[b, a]
    if fwd + back == 0:
        return 0.0
    return float((fwd - back) / (fwd + back))


def reference_distance(taus, weights) -> float:
    """Weighted mean of tau values with weights clamped at zero; 0 when no weight remains."""
    w = np.maximum(np.asarray(weights, float), 0.0)
    total = w.sum()
    return float(np.dot(taus, w) / total) if total > 0 else 0.0


def related_weights(concept_vecs: np.ndarray, wiki_vecs: np.ndarray, top_k: int) -> sp.csr_matrix:
    """concepts x general-concepts matrix holding max(omega, 0) for each concept's top_k neighbours."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    sims = cosine_matrix(concept_vecs, wiki_vecs)
    k = min(top_k, sims.shape[1])
    if k == 0:
        return sp.csr_matrix(sims.shape)
    # stable sort: ties resolved by general-concept order
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(sims.shape[0]), k)
    vals = np.maximum(sims[rows, top.ravel()], 0.0)
    W = sp.csr_matrix((vals, (rows, top.ravel())), shape=sims.shape)
    W.eliminate_zeros()
    return W


def refd(c_i: str, c_j: str, wiki: WikiRefCorpus, provider: EmbeddingProvider, top_k: int = 20) -> float:
    """RefD for one concept pair, straight from the definition (no matrix tricks)."""
    wiki_vecs = provider.matrix(wiki.concepts)
    W = related_weights(provider.matrix([c_i, c_j]), wiki_vecs, top_k).toarray()
    taus, weights = [], []
    idx_i, idx_j = np.flatnonzero(W[0]), np.flatnonzero(W[1])
    for a in idx_i:
        for b in idx_j:
            taus.append(tau(wiki.concepts[a], wiki.concepts[b], wiki))
            weights.append(W[0, a] * W[1, b])
    return reference_distance(taus, weights) if taus else 0.0


def rd_classify(value: float, theta: float = 0.15) -> str:
    """Band a RefD value: (theta, 1] prior, [-theta, theta] neutral, [-1, -theta) posterior."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if value > theta:
        return "prior"
    if value < -theta:
        return "posterior"
    return "neutral"


RD_LABEL = {"prior": 1, "neutral": 0, "posterior": -1}


# -- features ---------------------------------------------------------------

@dataclass
class PairFeature:
    c_i: int
    c_j: int
    omega: float
    asyd: float
    refd: float


class PairFeatureSource:
    """Computes (omega, AsyD, RefD) for directed concept pairs of one vocabulary."""

    def __init__(self, phrases: list[str], cooc: sp.csr_matrix, provider: EmbeddingProvider,
                 wiki: WikiRefCorpus | None = None, top_k: int = 20, smoothing_eps: float = 1e-12):
        self.phrases = list(phrases)
        self.index = {p: k for k, p in enumerate(self.phrases)}
        self.cooc = cooc.tocsr()
        self.smoothing_eps = smoothing_eps
        vecs = provider.matrix(self.phrases)
        norms = np.linalg.norm(vecs, axis=1)
        norms[norms == 0] = np.inf
        self._unit = vecs / norms[:, None]
        if wiki is not None and wiki.concepts:
            W = related_weights(vecs, provider.matrix(wiki.concepts), top_k)
            num = (W @ wiki.tau_matrix() @ W.T).tocsr()
            mass = np.asarray(W.sum(axis=1)).ravel()
            self._refd_num = num
            self._mass = mass
        else:
            self._refd_num = sp.csr_matrix((len(self.phrases), len(self.phrases)))
            self._mass = np.zeros(len(self.phrases))

    def __len__(self):
        return len(self.phrases)

    def omega(self, i, j):
        return np.clip(np.einsum("ij,ij->i", self._unit[i], self._unit[j]), -1.0, 1.0)

    def asyd(self, i, j):
        p_ij = np.asarray(self.cooc[i, j]).ravel()
        p_ji = np.asarray(self.cooc[j, i]).ravel()
        return asyd(p_ij, p_ji, self.smoothing_eps)

    def refd(self, i, j):
        num = np.asarray(self._refd_num[i, j]).ravel()
        den = self._mass[i] * self._mass[j]
        out = np.zeros(len(num))
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        return np.clip(out, -1.0, 1.0)

    def features(self, i, j) -> np.ndarray:
        """(n, 3) array of omega, AsyD, RefD for pairs (i[k], j[k])."""
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        j = np.atleast_1d(np.asarray(j, dtype=np.int64))
        if len(i) == 0:
            return np.zeros((0, 3))
        return np.column_stack([self.omega(i, j), self.asyd(i, j), self.refd(i, j)])

    def pair_features(self, i: int, j: int) -> PairFeature:
        o, a, r = self.features([i], [j])[0]
        return PairFeature(i, j, float(o), float(a), float(r))

    def candidate_pairs(self, refd_min: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        """Ordered pairs with sequential co-occurrence in either direction or |RefD| >= refd_min."""
        evidence = (self.cooc + self.cooc.T).tocoo()
        keys = set(zip(evidence.row.tolist(), evidence.col.tolist()))
        num = self._refd_num.tocoo()
        if num.nnz:
            den = self._mass[num.row] * self._mass[num.col]
            val = np.divide(num.data, den, out=np.zeros_like(num.data), where=den > 0)
            strong = np.abs(val) >= refd_min
            keys.update(zip(num.row[strong].tolist(), num.col[strong].tolist()))
            keys.update(zip(num.col[strong].tolist(), num.row[strong].tolist()))
        pairs = sorted((a, b) for a, b in keys if a != b)
        if not pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = np.array(pairs, dtype=np.int64)
        return arr[:, 0], arr[:, 1]


# -- annotations ------------------------------------------------------------

@dataclass
class AnnotationSet:
    pairs: list[tuple[str, str, int]]

    def __post_init__(self):
        seen = set()
        for a, b, label in self.pairs:
            if label not in LABELS:
                raise ValueError(f"label {label!r} for ({a}, {b}) not in {{+1, -1, 0}}")
            key = frozenset((a, b))
            if key in seen:
                raise ValueError(f"duplicate annotation for pair ({a}, {b})")
            seen.add(key)

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def from_file(cls, path) -> "AnnotationSet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"annotations file not found: {path}")
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or (lineno == 1 and line.startswith("c_i\t")):
                    continue
                try:
                    a, b, label = line.split("\t")
                    pairs.append((normalize_phrase(a), normalize_phrase(b), int(label)))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected c_i<TAB>c_j<TAB>label") from None
        return cls(pairs)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("c_i\tc_j\tlabel\n")
            for a, b, label in self.pairs:
                fh.write(f"{a}\t{b}\t{label:+d}\n" if label else f"{a}\t{b}\t0\n")


# -- extraction metrics -----------------------------------------------------

@dataclass
class ExtractionReport:
    per_class: dict  # label -> (precision, recall, f1, support)
    macro: tuple  # (precision, recall, f1) over all classes
    directional: tuple  # (precision, recall, f1) macro over the +1 / -1 classes
    accuracy: float

    @property
    def f1(self) -> float:
        return self.directional[2]


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def eval_extraction(predictions, gold, classes=LABELS) -> ExtractionReport:
    """Per-class precision/recall/F1 for aligned label sequences."""
    pred = np.asarray(list(predictions))
    gold = np.asarray(list(gold))
    if len(gold) == 0:
        raise ValueError("empty gold set")
    if len(pred) != len(gold):
        raise ValueError("predictions must cover every gold pair")
    per = {}
    for c in classes:
        tp = int(np.sum((pred == c) & (gold == c)))
        fp = int(np.sum((pred == c) & (gold != c)))
        fn = int(np.sum((pred != c) & (gold == c)))
        per[c] = (*_prf(tp, fp, fn), int(np.sum(gold == c)))
    mean = lambda cs: tuple(float(np.mean([per[c][k] for c in cs])) for k in range(3))
    directional = [c for c in classes if c != 0] or list(classes)
    return ExtractionReport(per, mean(classes), mean(directional), float(np.mean(pred == gold)))


# -- PKL regression ---------------------------------------------------------

def fit_logistic(X, targets, lr: float = 1.0, max_iter: int = 50000, tol: float = 1e-9, w0=None):
    """Full-batch gradient descent on mean cross-entropy with soft targets.

    Returns ``(weights, losses)``. Stops when the largest gradient entry
    drops below ``tol``.
    """
    X = np.asarray(X, float)
    t = np.asarray(targets, float)
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, float)
    losses = []
    for _ in range(max_iter):
        p = sigmoid(X @ w)
        pc = np.clip(p, 1e-12, 1 - 1e-12)
        losses.append(float(-np.mean(t * np.log(pc) + (1 - t) * np.log(1 - pc))))
        grad = X.T @ (p - t) / len(t)
        if np.max(np.abs(grad)) < tol:
            break
        w -= lr * grad
    return w, losses


def classify_scores(scores, margin: float):
    s = np.asarray(scores, float)
    return np.where(s > 0.5 + margin, 1, np.where(s < 0.5 - margin, -1, 0))


MARGIN_GRID = tuple(np.round(np.arange(0.01, 0.46, 0.01), 2))


@dataclass
class PklModel:
    weights: np.ndarray  # one per active feature, then bias
    feature_mask: tuple
    margin: float
    train_report: ExtractionReport | None = None
    test_report: ExtractionReport | None = None
    losses: list = field(default_factory=list)

    def design(self, feats: np.ndarray) -> np.ndarray:
        cols = [feats[:, k] for k, on in enumerate(self.feature_mask) if on]
        return np.column_stack(cols + [np.ones(len(feats))])

    def predict(self, feats: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(feats)
        return sigmoid(self.design(feats) @ self.weights)

    def classify(self, feats) -> np.ndarray:
        return classify_scores(self.predict(feats), self.margin)


def feature_mask(spec: str) -> tuple:
    names = [s.strip() for s in spec.split(",") if s.strip()]
    bad = [n for n in names if n not in FEATURES]
    if bad:
        raise ValueError(f"unknown feature(s) {bad}; choose from {FEATURES}")
    return tuple(f in names for f in FEATURES)


def annotation_split(n: int, train_frac: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_frac * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def resolve_annotations(annotations: AnnotationSet, index: dict):
    """Concept-id triples for annotations whose concepts are in the vocabulary."""
    kept, dropped = [], 0
    for a, b, label in annotations.pairs:
        if a in index and b in index:
            kept.append((index[a], index[b], label))
        else:
            dropped += 1
    if dropped:
        log.warning("%d annotated pair(s) mention concepts outside the vocabulary; skipped", dropped)
    return kept


def fit_pkl(annotations: AnnotationSet, source: PairFeatureSource, cfg: PklConfig | None = None,
            seed: int = 0, mask=None) -> PklModel:
    """Logistic fusion of the pair features fitted on the annotated pairs.

    Targets are soft: +1 -> 1.0, 0 -> 0.5, -1 -> 0.0. A ``train_frac``
    share of the annotations (seeded shuffle) trains the model; the rest
    is scored into ``test_report``.
    """
    cfg = cfg or PklConfig()
    mask = feature_mask(cfg.features) if mask is None else tuple(mask)
    triples = resolve_annotations(annotations, source.index)
    if not triples:
        raise ValueError("no usable annotations")
    i = np.array([t[0] for t in triples])
    j = np.array([t[1] for t in triples])
    labels = np.array([t[2] for t in triples])
    if len(set(labels.tolist())) == 1:
        log.warning("all annotations carry label %+d; the fit is degenerate", labels[0])
    feats = source.features(i, j)
    train, test = annotation_split(len(triples), cfg.train_frac, seed)
    model = PklModel(np.zeros(sum(mask) + 1), mask, 0.0)
    X = model.design(feats[train])
    targets = np.array([SOFT_TARGET[int(l)] for l in labels[train]])
    model.weights, model.losses = fit_logistic(X, targets, cfg.lr, cfg.max_iter, cfg.tol)
    scores = model.predict(feats[train])
    if cfg.margin >= 0:
        model.margin = cfg.margin
    else:
        best = max(MARGIN_GRID, key=lambda m: (eval_extraction(classify_scores(scores, m), labels[train]).macro[2], -m))
        model.margin = float(best)
    model.train_report = eval_extraction(classify_scores(scores, model.margin), labels[train])
    if len(test):
        model.test_report = eval_extraction(model.classify(feats[test]), labels[test])
    return model


# -- graph ------------------------------------------------------------------

@dataclass
class PrerequisiteGraph:
    nodes: list[str]
    src: np.ndarray
    dst: np.ndarray
    score: np.ndarray

    def __len__(self):
        return len(self.src)

    def edges(self):
        for a, r, b in zip(self.src.tolist(), self.score.tolist(), self.dst.tolist()):
            yield self.nodes[a], r, self.nodes[b]

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("c_p\tscore\tc_q\n")
            for a, r, b in self.edges():
                fh.write(f"{a}\t{r!r}\t{b}\n")

    @classmethod
    def from_file(cls, path, nodes: list[str] | None = None) -> "PrerequisiteGraph":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"prerequisite graph file not found: {path}")
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or (lineno == 1 and line == "c_p\tscore\tc_q"):
                    continue
                try:
                    a, r, b = line.split("\t")
                    rows.append((a, float(r), b))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected c_p<TAB>score<TAB>c_q") from None
        nodes = list(nodes) if nodes is not None else sorted({r[0] for r in rows} | {r[2] for r in rows})
        index = {p: k for k, p in enumerate(nodes)}
        for a, r, b in rows:
            if a not in index or b not in index:
                raise ValueError(f"{path}: edge ({a}, {b}) uses a concept outside the vocabulary")
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{path}: edge ({a}, {b}) has confidence {r} outside [0, 1]")
        return cls(nodes, np.array([index[r[0]] for r in rows], dtype=np.int64),
                   np.array([index[r[2]] for r in rows], dtype=np.int64),
                   np.array([r[1] for r in rows], dtype=np.float64))


def score_graph(model: PklModel, source: PairFeatureSource, pairs=None, edge_threshold: float = 0.0,
                refd_min: float = 0.05) -> PrerequisiteGraph:
    """Scores every candidate pair with the fitted PKL model and prunes weak edges."""
    i, j = pairs if pairs is not None else source.candidate_pairs(refd_min)
    i, j = np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64)
    scores = model.predict(source.features(i, j)) if len(i) else np.zeros(0)
    keep = scores >= edge_threshold
    return PrerequisiteGraph(source.phrases, i[keep], j[keep], scores[keep])


def rd_baseline(c_i: int, c_j: int, source: PairFeatureSource, theta: float = 0.15) -> str:
    return rd_classify(float(source.refd(np.array([c_i]), np.array([c_j]))[0]), theta)
