"""Corpus loading, implicit feedback, knowledge states and dataset splits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

POS_TAGS = {"A", "N", "P", "O"}
INTERACTION_COLUMNS = ("user", "item", "rating", "timestamp")
SPLIT_MODES = ("ratio-80-10-10", "leave-one-out", "cold-user", "cold-item")


class DataError(ValueError):
    """Input files are missing, malformed, or unusable."""


class Token(NamedTuple):
    surface: str
    pos: str


@dataclass(frozen=True)
class Document:
    item: int
    title_tokens: tuple[Token, ...]
    content_tokens: tuple[Token, ...]


class Interaction(NamedTuple):
    user: int
    item: int
    rating: float
    timestamp: int


@dataclass(frozen=True)
class Corpus:
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    documents: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.users)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def active_users(self) -> np.ndarray:
        return np.unique(self.users)

    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {v: k for k, v in enumerate(self.item_ids)}

    def interactions(self):
        for k in range(len(self)):
            yield Interaction(int(self.users[k]), int(self.items[k]),
                              float(self.ratings[k]), int(self.timestamps[k]))

    def subset(self, mask) -> "Corpus":
        mask = np.asarray(mask)
        return replace(self, users=self.users[mask], items=self.items[mask],
                       ratings=self.ratings[mask], timestamps=self.timestamps[mask])

    def histories(self) -> dict[int, np.ndarray]:
        """Per-user interaction indices ordered by (timestamp, item id)."""
        order = np.lexsort((self.items, self.timestamps, self.users))
        users = self.users[order]
        cuts = np.flatnonzero(np.diff(users)) + 1
        return {int(self.users[g[0]]): g for g in np.split(order, cuts) if len(g)} if len(order) else {}

    def positives_by_user(self) -> dict[int, set]:
        out: dict[int, set] = {}
        for u, v in zip(self.users.tolist(), self.items.tolist()):
            out.setdefault(u, set()).add(v)
        return out


# -- loading ----------------------------------------------------------------

def parse_tokens(text: str, where: str) -> tuple[Token, ...]:
    tokens = []
    for raw in text.split():
        surface, sep, pos = raw.rpartition("/")
        if not sep or not surface:
            raise DataError(f"{where}: token {raw!r} is not of the form surface/POS")
        if pos not in POS_TAGS:
            raise DataError(f"{where}: token {raw!r} has POS {pos!r}, expected one of A,N,P,O")
        tokens.append(Token(surface, pos))
    return tuple(tokens)


def format_tokens(tokens) -> str:
    return " ".join(f"{t.surface}/{t.pos}" for t in tokens)


def read_interactions(path, lenient: bool = False):
    """Rows of (user, item, rating, timestamp) with original string ids."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interactions file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        missing = [c for c in INTERACTION_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}:1: header lacks column(s) {', '.join(missing)}")
        extra = [c for c in header if c not in INTERACTION_COLUMNS]
        if extra and not lenient:
            raise DataError(f"{path}:1: unknown column(s) {', '.join(extra)} (use lenient mode to ignore)")
        col = {name: header.index(name) for name in INTERACTION_COLUMNS}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            user, item = parts[col["user"]], parts[col["item"]]
            try:
                rating = float(parts[col["rating"]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: field 'rating' is not numeric: "
                                f"{parts[col['rating']]!r}") from None
            if not math.isfinite(rating):
                raise DataError(f"{path}:{lineno}: field 'rating' is not finite")
            try:
                ts = int(parts[col["timestamp"]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: field 'timestamp' is not an integer: "
                                f"{parts[col['timestamp']]!r}") from None
            rows.append((user, item, rating, ts, lineno))
    return rows


def read_documents(path):
    """Yields ``(item_id, title_tokens, content_tokens)`` from a documents file.

    One record per line: ``item_id<TAB>title tokens<TAB>content tokens``,
    tokens written ``surface/POS``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"documents file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields "
                                f"(item, title, content), got {len(parts)}")
            where = f"{path}:{lineno}"
            yield parts[0], parse_tokens(parts[1], where + " title"), parse_tokens(parts[2], where + " content")


def load_corpus(interactions_path, documents_path=None, lenient: bool = False) -> Corpus:
    rows = read_interactions(interactions_path, lenient)
    if not rows:
        raise DataError(f"{interactions_path}: no interactions")
    seen = {}
    for user, item, _, ts, lineno in rows:
        key = (user, item, ts)
        if key in seen:
            raise DataError(f"{interactions_path}:{lineno}: duplicate interaction "
                            f"(user={user}, item={item}, timestamp={ts}) first seen on line {seen[key]}")
        seen[key] = lineno

    docs_raw = list(read_documents(documents_path)) if documents_path else []
    user_ids = sorted({r[0] for r in rows})
    item_ids = sorted({r[1] for r in rows} | {d[0] for d in docs_raw})
    uidx = {u: k for k, u in enumerate(user_ids)}
    vidx = {v: k for k, v in enumerate(item_ids)}
    documents = {}
    for item, title, content in docs_raw:
        documents[vidx[item]] = Document(vidx[item], title, content)
    return Corpus(
        users=np.array([uidx[r[0]] for r in rows], dtype=np.int64),
        items=np.array([vidx[r[1]] for r in rows], dtype=np.int64),
        ratings=np.array([r[2] for r in rows], dtype=np.float64),
        timestamps=np.array([r[3] for r in rows], dtype=np.int64),
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
        documents=documents,
    )


# -- feedback filtering -----------------------------------------------------

def to_implicit(corpus: Corpus, threshold: float = 3.0) -> Corpus:
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    kept = corpus.subset(corpus.ratings >= threshold)
    return replace(kept, ratings=np.ones(len(kept)))


def filter_min_interactions(corpus: Corpus, min_count: int = 4) -> Corpus:
    """Drops users with fewer than ``min_count`` positives (default 4, i.e. more than three)."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = np.bincount(corpus.users, minlength=corpus.n_users)
    return corpus.subset(counts[corpus.users] >= min_count)


# -- knowledge states -------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeState:
    user: int
    prior: frozenset
    target: frozenset

    @property
    def contextless(self) -> bool:
        return not self.prior and not self.target


def history_segments(n: int, prior_frac: float, target_frac: float) -> tuple[int, int]:
    """Number of leading (prior) and trailing (target) items for a history of length n."""
    n_prior = math.floor(prior_frac * n + 1e-9)
    n_target = math.floor(target_frac * n + 1e-9)
    return n_prior, min(n_target, n - n_prior)


def derive_knowledge_state(corpus: Corpus, item_concepts, prior_frac: float = 0.3,
                           target_frac: float = 0.2, vocabulary=None):
    """Prior/target concept sets per user plus a mask of the middle interactions.

    Histories are ordered by (timestamp, item id). The first
    ``floor(prior_frac*n)`` items feed the prior set, the last
    ``floor(target_frac*n)`` the target set; the remaining middle items are
    flagged in the returned boolean mask and are the only interactions the
    recommender may train or be evaluated on.
    """
    if not (0.0 <= prior_frac and 0.0 <= target_frac and prior_frac + target_frac <= 1.0):
        raise ValueError("need 0 <= prior_frac + target_frac <= 1 with both nonnegative")
    allowed = None if vocabulary is None else set(vocabulary)
    states = {}
    middle = np.zeros(len(corpus), dtype=bool)
    for user, idx in corpus.histories().items():
        n = len(idx)
        n_prior, n_target = history_segments(n, prior_frac, target_frac)
        prior, target = set(), set()
        for k in idx[:n_prior]:
            prior.update(item_concepts.get(int(corpus.items[k]), ()))
        for k in idx[n - n_target:] if n_target else ():
            target.update(item_concepts.get(int(corpus.items[k]), ()))
        if allowed is not None:
            prior &= allowed
            target &= allowed
        middle[idx[n_prior:n - n_target]] = True
        states[user] = KnowledgeState(user, frozenset(prior), frozenset(target))
    return states, middle


# -- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    corpus: Corpus
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    mode: str

    def part(self, name: str) -> Corpus:
        return self.corpus.subset(getattr(self, name))


def _largest_remainder(sizes: np.ndarray, frac: float, total: int) -> np.ndarray:
    raw = sizes * frac
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.lexsort((np.arange(len(sizes)), -(raw - base)))
        base[order[:short]] += 1
    return base


def make_split(corpus: Corpus, mode: str = "ratio-80-10-10", seed: int = 0,
               fractions=(0.8, 0.1, 0.1)) -> DatasetSplit:
    if mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {mode!r}; choose from {', '.join(SPLIT_MODES)}")
    rng = np.random.default_rng(seed)
    hist = corpus.histories()
    train, val, test = [], [], []

    if mode == "ratio-80-10-10":
        users = sorted(hist)
        sizes = np.array([len(hist[u]) for u in users])
        n = int(sizes.sum())
        n_val = round(fractions[1] * n)
        n_test = round(fractions[2] * n)
        test_q = _largest_remainder(sizes, fractions[2], n_test)
        val_q = _largest_remainder(sizes - test_q, fractions[1] / max(1e-12, 1 - fractions[2]), n_val)
        val_q = np.minimum(val_q, sizes - test_q)
        for u, tq, vq in zip(users, test_q, val_q):
            idx = rng.permutation(hist[u])
            test.extend(idx[:tq])
            val.extend(idx[tq:tq + vq])
            train.extend(idx[tq + vq:])
    elif mode == "leave-one-out":
        for u in sorted(hist):
            idx = hist[u]
            test.append(idx[-1])
            if len(idx) >= 3:
                val.append(idx[-2])
                train.extend(idx[:-2])
            else:
                train.extend(idx[:-1])
    else:
        key = corpus.users if mode == "cold-user" else corpus.items
        entities = np.unique(key)
        if len(entities) < 3:
            raise DataError(f"{mode} split needs at least 3 distinct "
                            f"{'users' if mode == 'cold-user' else 'items'}, got {len(entities)}")
        perm = rng.permutation(entities)
        n_test = max(1, round(fractions[2] * len(perm)))
        n_val = max(1, round(fractions[1] * len(perm)))
        group = np.zeros(key.max() + 1, dtype=int)
        group[perm[:n_test]] = 2
        group[perm[n_test:n_test + n_val]] = 1
        g = group[key]
        train, val, test = np.flatnonzero(g == 0), np.flatnonzero(g == 1), np.flatnonzero(g == 2)

    as_idx = lambda xs: np.sort(np.asarray(xs, dtype=np.int64))
    return DatasetSplit(corpus, as_idx(train), as_idx(val), as_idx(test), mode)
