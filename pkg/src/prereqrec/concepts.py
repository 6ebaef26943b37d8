"""Item concept extraction: TextRank seeds, noun-phrase candidates, similarity propagation."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingProvider, cosine_matrix, normalize_phrase

CONTENT_TAGS = {"A", "N"}
# (A|N)+N is a special case of the bridged form, so one pattern covers both
_NP_RE = re.compile(r"[AN]*(?:NP)?[AN]*N")


@dataclass
class ExtractionConfig:
    keep_fraction: float = 0.5
    window: int = 2
    damping: float = 0.85
    textrank_eps: float = 1e-6
    textrank_max_iter: int = 100
    lam: float = 0.5
    alpha: float = 0.5
    propagation_max_iter: int = 100
    propagation_eps: float = 1e-6
    accept: float = 0.5


@dataclass
class ConceptCandidate:
    phrase: str
    source: str  # "seed" | "candidate"
    score: float

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("empty concept phrase")


@dataclass
class PropagationGraph:
    nodes: list[ConceptCandidate]
    weights: np.ndarray  # symmetric, zero diagonal

    @classmethod
    def build(cls, seeds, candidates, provider: EmbeddingProvider) -> "PropagationGraph":
        nodes = [ConceptCandidate(p, "seed", 1.0) for p in seeds]
        seen = set(seeds)
        nodes += [ConceptCandidate(p, "candidate", 0.0) for p in candidates if p not in seen]
        vecs = provider.matrix([n.phrase for n in nodes])
        W = cosine_matrix(vecs, vecs)
        W = (W + W.T) / 2.0
        np.fill_diagonal(W, 0.0)
        return cls(nodes, W)


# -- TextRank ---------------------------------------------------------------

def textrank_scores(tokens, window: int = 2, damping: float = 0.85, eps: float = 1e-6,
                    max_iter: int = 100) -> dict[str, float]:
    """TextRank over the adjective/noun words of a token sequence.

    Words are linked when they fall within ``window`` positions of each
    other in the filtered sequence. Scores follow
    ``S(v) = (1-d) + d * sum_u S(u)/deg(u)`` from an all-ones start.
    """
    words = [normalize_phrase(t.surface) for t in tokens if t.pos in CONTENT_TAGS]
    words = [w for w in words if w]
    nodes = list(dict.fromkeys(words))
    if not nodes:
        return {}
    neighbours = {w: set() for w in nodes}
    for i, w in enumerate(words):
        for other in words[i + 1:i + window]:
            if other != w:
                neighbours[w].add(other)
                neighbours[other].add(w)
    score = {w: 1.0 for w in nodes}
    for _ in range(max_iter):
        new = {w: (1.0 - damping) + damping * sum(score[u] / len(neighbours[u]) for u in neighbours[w])
               for w in nodes}
        delta = max(abs(new[w] - score[w]) for w in nodes)
        score = new
        if delta < eps:
            break
    return score


def textrank_seeds(title_tokens, keep_fraction: float = 0.5, **kwargs) -> list[str]:
    """Top ``ceil(keep_fraction * |nodes|)`` title words by TextRank score.

    Ties go to the word that appears first in the title.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    scores = textrank_scores(title_tokens, **kwargs)
    if not scores:
        return []
    first = {w: k for k, w in enumerate(scores)}
    ranked = sorted(scores, key=lambda w: (-scores[w], first[w]))
    return ranked[:math.ceil(keep_fraction * len(ranked) - 1e-12)]


# -- noun phrases -----------------------------------------------------------

def _tag_string(tokens) -> str:
    return "".join(t.pos if t.pos in ("A", "N", "P") else "O" for t in tokens)


def noun_phrase_spans(tokens) -> list[tuple[int, int]]:
    """Greedy-longest, non-overlapping spans (start, end) matching the noun-phrase pattern."""
    tags = _tag_string(tokens)
    spans = []
    i = 0
    while i < len(tags):
        end = None
        for j in range(len(tags), i, -1):
            if tags[j - 1] == "N" and _NP_RE.fullmatch(tags, i, j):
                end = j
                break
        if end is None:
            i += 1
        else:
            spans.append((i, end))
            i = end
    return spans


def noun_phrase_candidates(content_tokens) -> list[str]:
    out = []
    for i, j in noun_phrase_spans(content_tokens):
        phrase = normalize_phrase(" ".join(t.surface for t in content_tokens[i:j]))
        if phrase and phrase not in out:
            out.append(phrase)
    return out


# -- propagation ------------------------------------------------------------

def propagate(graph: PropagationGraph, lam: float = 0.5, alpha: float = 0.5,
              max_iters: int = 100, eps: float = 1e-6) -> dict[str, float]:
    """Spreads seed confidence to related nodes.

    Each sweep sets ``s <- (1-alpha)*s + alpha*Wn @ s`` where ``Wn`` keeps
    only edges above ``lam`` and divides each row by ``max(1, row sum)``.
    Seeds are pinned at 1; nodes without a surviving edge keep their score.
    """
    if not -1.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [-1, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    s = np.array([n.score for n in graph.nodes], dtype=np.float64)
    is_seed = np.array([n.source == "seed" for n in graph.nodes], dtype=bool)
    W = np.where(graph.weights > lam, graph.weights, 0.0)
    np.fill_diagonal(W, 0.0)
    rows = W.sum(axis=1)
    Wn = W / np.maximum(rows, 1.0)[:, None]
    active = rows > 0
    s[is_seed] = 1.0
    for _ in range(max_iters):
        new = s.copy()
        new[active] = (1.0 - alpha) * s[active] + alpha * (Wn[active] @ s)
        new = np.clip(new, 0.0, 1.0)
        new[is_seed] = 1.0
        delta = np.max(np.abs(new - s)) if len(s) else 0.0
        s = new
        if delta < eps:
            break
    return {n.phrase: float(x) for n, x in zip(graph.nodes, s)}


def extract_item_concepts(doc, provider: EmbeddingProvider, cfg: ExtractionConfig | None = None
                          ) -> dict[str, float]:
    """Accepted concept phrases of one document with their converged scores."""
    cfg = cfg or ExtractionConfig()
    seeds = textrank_seeds(doc.title_tokens, cfg.keep_fraction, window=cfg.window,
                           damping=cfg.damping, eps=cfg.textrank_eps, max_iter=cfg.textrank_max_iter)
    candidates = noun_phrase_candidates(doc.content_tokens)
    if not seeds:
        return {}
    graph = PropagationGraph.build(seeds, candidates, provider)
    scores = propagate(graph, cfg.lam, cfg.alpha, cfg.propagation_max_iter, cfg.propagation_eps)
    return {p: s for p, s in scores.items() if s >= cfg.accept}


class ConceptVocabulary:
    """Interns normalized concept phrases into dense integer ids."""

    def __init__(self, phrases=()):
        self.phrases: list[str] = []
        self.index: dict[str, int] = {}
        for p in phrases:
            self.intern(p)

    def intern(self, phrase: str) -> int:
        key = normalize_phrase(phrase)
        if key not in self.index:
            self.index[key] = len(self.phrases)
            self.phrases.append(key)
        return self.index[key]

    def __len__(self):
        return len(self.phrases)

    def __contains__(self, phrase):
        return normalize_phrase(phrase) in self.index

    def __getitem__(self, phrase) -> int:
        return self.index[normalize_phrase(phrase)]


def extract_corpus_concepts(documents: dict, provider: EmbeddingProvider,
                            cfg: ExtractionConfig | None = None):
    """Runs extraction for every document.

    Returns ``(vocabulary, scores)`` with ``scores[item][concept_id] = score``.
    Interning happens in sorted item order so ids are reproducible.
    """
    vocab = ConceptVocabulary()
    out = {}
    for item in sorted(documents):
        found = extract_item_concepts(documents[item], provider, cfg)
        out[item] = {vocab.intern(p): s for p, s in sorted(found.items())}
    return vocab, out


def write_item_concepts(path, item_ids, vocab: ConceptVocabulary, scores: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("item_id\tconcept\tscore\n")
        for item in sorted(scores):
            for cid in sorted(scores[item], key=lambda c: vocab.phrases[c]):
                fh.write(f"{item_ids[item]}\t{vocab.phrases[cid]}\t{scores[item][cid]!r}\n")


def read_item_concepts(path, item_index: dict[str, int]):
    """Inverse of :func:`write_item_concepts`; unknown item ids are an error."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"item concepts file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.rstrip("\n").split("\t") != ["item_id", "concept", "score"]:
            raise ValueError(f"{path}:1: expected header item_id/concept/score")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields")
            if parts[0] not in item_index:
                raise ValueError(f"{path}:{lineno}: unknown item {parts[0]!r}")
            rows.append((item_index[parts[0]], parts[1], float(parts[2])))
    vocab = ConceptVocabulary()
    scores = {}
    for item, phrase, s in sorted(rows):
        scores.setdefault(item, {})[vocab.intern(phrase)] = s
    return vocab, scores
