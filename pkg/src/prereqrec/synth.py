"""Synthetic corpus with planted prerequisite chains.

Concepts form ``n_chains`` chains c_0 -> c_1 -> ... -> c_{L-1}. Item k of a
chain covers one segment (c_s, c_{s+1}); users walk one chain segment by
segment, so consumption order, document term frequencies, reference counts
and embedding geometry all point the same way.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SYLLABLES = ("ba", "ke", "lo", "mi", "nu", "pa", "ri", "so", "ta", "ve", "zo", "qui", "dra", "fen", "gor",
             "hal", "jex", "kru", "lum", "mor", "nix", "osk", "pel", "rav", "sul", "tor", "ulm", "vex", "wen", "yar")
GENERIC = ("course", "primer", "notes", "lecture", "guide", "workshop", "tutorial", "seminar")
FILLER = ("the", "this", "covers", "with", "and", "then", "also", "uses", "about", "on")
CHAIN_COSINE = 0.8
FORWARD_PKL, REVERSE_PKL = 0.9, 0.1


@dataclass
class SyntheticSpec:
    n_users: int = 500
    n_items: int = 300
    n_concepts: int = 200
    chain_length: int = 5
    noise_rate: float = 0.1
    seed: int = 0
    n_annotations: int = 300
    dimension: int = 64
    n_distractors: int = 80
    take_prob: float = 0.8
    explore_prob: float = 0.0

    def validate(self):
        if self.chain_length < 2:
            raise ValueError("chain_length must be >= 2")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValueError("noise_rate must lie in [0, 0.5)")
        if self.n_concepts < self.chain_length:
            raise ValueError("need at least one full chain of concepts")
        if min(self.n_users, self.n_items) < 1:
            raise ValueError("need at least one user and one item")

    @property
    def n_chains(self) -> int:
        return self.n_concepts // self.chain_length

    @property
    def n_segments(self) -> int:
        return self.chain_length - 1


def pseudo_words(n: int, rng, taken=()) -> list[str]:
    words, seen = [], set(taken)
    while len(words) < n:
        k = rng.integers(2, 4)
        w = "".join(SYLLABLES[i] for i in rng.integers(0, len(SYLLABLES), size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    concepts: list          # chains[c][k] is the concept name
    items: list             # (item_id, chain, segment)
    interactions: list      # (user_id, item_id, rating, timestamp)
    documents: list         # (item_id, title, content) as token strings
    embeddings: dict
    wiki: list              # (t_i, t_j, count)
    annotations: list       # (c_i, c_j, label)
    ground_truth: list      # (c_p, score, c_q)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / fname for name, fname in (
            ("interactions", "interactions.tsv"), ("documents", "documents.tsv"),
            ("embeddings", "embeddings.tsv"), ("wiki", "wiki_refs.tsv"),
            ("annotations", "annotations.tsv"), ("ground_truth", "ground_truth.tsv"))}
        with open(paths["interactions"], "w", encoding="utf-8") as fh:
            fh.write("user\titem\trating\ttimestamp\n")
            for u, v, r, t in self.interactions:
                fh.write(f"{u}\t{v}\t{r:g}\t{t}\n")
        with open(paths["documents"], "w", encoding="utf-8") as fh:
            for v, title, content in self.documents:
                fh.write(f"{v}\t{title}\t{content}\n")
        with open(paths["embeddings"], "w", encoding="utf-8") as fh:
            fh.write(f"dimension={self.spec.dimension}\n")
            for phrase in sorted(self.embeddings):
                fh.write(phrase + "\t" + " ".join(f"{x:.10f}" for x in self.embeddings[phrase]) + "\n")
        with open(paths["wiki"], "w", encoding="utf-8") as fh:
            fh.write("t_i\tt_j\tcount\n")
            for a, b, n in self.wiki:
                fh.write(f"{a}\t{b}\t{n}\n")
        with open(paths["annotations"], "w", encoding="utf-8") as fh:
            fh.write("c_i\tc_j\tlabel\n")
            for a, b, label in self.annotations:
                fh.write(f"{a}\t{b}\t{label:+d}\n")
        with open(paths["ground_truth"], "w", encoding="utf-8") as fh:
            fh.write("c_p\tscore\tc_q\n")
            for a, r, b in self.ground_truth:
                fh.write(f"{a}\t{r}\t{b}\n")
        # starter config; input paths resolve against the config's directory
        paths["config"] = out / "config.ini"
        with open(paths["config"], "w", encoding="utf-8") as fh:
            fh.write("[data]\n")
            for key in ("interactions", "documents", "embeddings", "wiki", "annotations"):
                fh.write(f"{key} = {paths[key].name}\n")
            fh.write(f"\n[run]\nseed = {self.spec.seed}\n")
        return {k: str(p) for k, p in paths.items()}


def _chain_embeddings(chains, dim, rng) -> dict:
    # x = a*centroid + b*noise with b/a chosen so same-chain cosine ~ CHAIN_COSINE
    ratio = math.sqrt(1.0 / CHAIN_COSINE - 1.0)
    table = {}
    for chain in chains:
        centroid = rng.normal(size=dim)
        centroid /= np.linalg.norm(centroid)
        for name in chain:
            noise = rng.normal(size=dim) / math.sqrt(dim)
            v = centroid + ratio * noise
            table[name] = v / np.linalg.norm(v)
    return table


def _document(chain, seg, rng, distractors):
    a, b = chain[seg], chain[seg + 1]
    title = f"{a}/N {GENERIC[rng.integers(len(GENERIC))]}/N"
    words = [f"{FILLER[rng.integers(len(FILLER))]}/O", f"{a}/N", f"{FILLER[rng.integers(len(FILLER))]}/O",
             f"{b}/N"]
    for d in rng.choice(distractors, size=2, replace=False):
        words += [f"{FILLER[rng.integers(len(FILLER))]}/O", f"{d}/N"]
    words += [f"{FILLER[rng.integers(len(FILLER))]}/O", f"{b}/N", "./O"]
    return title, " ".join(words)


def generate(spec: SyntheticSpec | None = None) -> SyntheticCorpus:
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_chains, n_seg = spec.n_chains, spec.n_segments
    names = pseudo_words(n_chains * spec.chain_length, rng, taken=GENERIC + FILLER)
    chains = [names[c * spec.chain_length:(c + 1) * spec.chain_length] for c in range(n_chains)]
    distractors = pseudo_words(spec.n_distractors, rng, taken=set(names) | set(GENERIC) | set(FILLER))
    width = len(str(max(spec.n_items, spec.n_users)))

    items = []
    by_chain_seg: dict = {}
    for i in range(spec.n_items):
        chain, seg = i % n_chains, (i // n_chains) % n_seg
        vid = f"i{i:0{width}d}"
        items.append((vid, chain, seg))
        by_chain_seg.setdefault((chain, seg), []).append(vid)
    documents = []
    for vid, chain, seg in items:
        title, content = _document(chains[chain], seg, rng, distractors)
        documents.append((vid, title, content))

    interactions = []
    all_items = [v for v, _, _ in items]
    for u in range(spec.n_users):
        uid = f"u{u:0{width}d}"
        chain = int(rng.integers(n_chains))
        seq = []
        for seg in range(n_seg):
            pool = by_chain_seg.get((chain, seg), [])
            if not pool:
                continue
            picked = [v for v in pool if rng.random() < spec.take_prob] or [pool[rng.integers(len(pool))]]
            rng.shuffle(picked)
            seq.extend(picked)
        if spec.explore_prob > 0:
            extra = [all_items[k] for k in rng.integers(0, len(all_items), size=len(seq))
                     if rng.random() < spec.explore_prob]
            for v in extra:
                if v not in seq:
                    seq.insert(int(rng.integers(len(seq) + 1)), v)
        for k in range(len(seq) - 1):
            if rng.random() < spec.noise_rate:
                seq[k], seq[k + 1] = seq[k + 1], seq[k]
        t = 0
        for v in seq:
            # low-rated distractors are dropped by the implicit-feedback filter
            if rng.random() < 0.15:
                t += 1
                other = all_items[rng.integers(len(all_items))]
                if other not in seq:
                    interactions.append((uid, other, int(rng.integers(1, 3)), t))
            t += 1
            interactions.append((uid, v, int(rng.integers(3, 6)), t))

    embeddings = _chain_embeddings(chains, spec.dimension, rng)

    wiki = []
    for chain in chains:
        for k in range(len(chain) - 1):
            wiki.append((chain[k], chain[k + 1], int(rng.integers(3, 9))))
            if rng.random() < spec.noise_rate:
                wiki.append((chain[k + 1], chain[k], 1))

    ground_truth = []
    for chain in chains:
        for k in range(len(chain) - 1):
            ground_truth.append((chain[k], FORWARD_PKL, chain[k + 1]))
            ground_truth.append((chain[k + 1], REVERSE_PKL, chain[k]))

    annotations = _annotations(chains, spec.n_annotations, rng)
    return SyntheticCorpus(spec, chains, items, interactions, documents, embeddings, wiki, annotations, ground_truth)


def _annotations(chains, n_total: int, rng) -> list:
    """Adjacent chain pairs (random orientation, label +/-1) plus cross-chain pairs (label 0)."""
    adjacent = [(c[k], c[k + 1]) for c in chains for k in range(len(c) - 1)]
    n_pos = min(len(adjacent), int(round(n_total * 160 / 300)))
    out = []
    for idx in rng.permutation(len(adjacent))[:n_pos]:
        a, b = adjacent[idx]
        out.append((a, b, 1) if rng.random() < 0.5 else (b, a, -1))
    n_neutral = n_total - len(out)
    seen = set()
    if len(chains) >= 2:
        max_neutral = sum(len(x) * len(y) for i, x in enumerate(chains) for y in chains[i + 1:])
        n_neutral = min(n_neutral, max_neutral)
        while len(seen) < n_neutral:
            c1, c2 = rng.choice(len(chains), size=2, replace=False)
            a = chains[c1][rng.integers(len(chains[c1]))]
            b = chains[c2][rng.integers(len(chains[c2]))]
            key = frozenset((a, b))
            if key not in seen:
                seen.add(key)
                out.append((a, b, 0))
    else:
        n_neutral = 0
    if len(out) < n_total:
        log.warning("spec only supports %d distinct annotated pairs (asked for %d)", len(out), n_total)
    order = rng.permutation(len(out))
    return [out[k] for k in order]
