"""Phrase vectors and the cosine relatedness used throughout concept extraction and RefD."""
from __future__ import annotations

import hashlib
import logging
import threading
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DIM = 64


def normalize_phrase(text: str) -> str:
    return " ".join(text.lower().split())


class EmbeddingProvider:
    """Phrase -> vector lookup with a deterministic hash fallback.

    Lookup order: exact phrase in the table, then (for multi-word phrases)
    the mean of the token vectors, then a unit-norm pseudo-random vector
    seeded from a stable hash of the normalized phrase.
    """

    def __init__(self, table: dict[str, np.ndarray] | None = None, dimension: int | None = None,
                 memoize: bool = True):
        table = table or {}
        if dimension is None:
            dimension = len(next(iter(table.values()))) if table else DEFAULT_DIM
        self.dimension = int(dimension)
        self.table = {}
        for phrase, vec in table.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise ValueError(f"vector for {phrase!r} has shape {vec.shape}, expected ({self.dimension},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for {phrase!r} is not finite")
            self.table[normalize_phrase(phrase)] = vec
        self.memoize = memoize
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def backend(self) -> str:
        return "file" if self.table else "hash"

    @classmethod
    def from_file(cls, path, memoize: bool = True) -> "EmbeddingProvider":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("dimension="):
                raise ValueError(f"{path}:1: expected header 'dimension=<n>', got {header!r}")
            dim = int(header.split("=", 1)[1])
            table = {}
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                try:
                    phrase, values = line.split("\t")
                    vec = np.array([float(x) for x in values.split()])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: malformed embedding row ({exc})") from None
                if len(vec) != dim:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
                table[phrase] = vec
        return cls(table, dim, memoize)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dimension={self.dimension}\n")
            for phrase in sorted(self.table):
                fh.write(phrase + "\t" + " ".join(repr(float(x)) for x in self.table[phrase]) + "\n")

    def _hash_vector(self, phrase: str) -> np.ndarray:
        digest = hashlib.sha256(phrase.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dimension)
        return vec / np.linalg.norm(vec)

    def _compute(self, phrase: str) -> np.ndarray:
        if phrase in self.table:
            return self.table[phrase]
        tokens = phrase.split()
        if len(tokens) > 1:
            return np.mean([self.embed(tok) for tok in tokens], axis=0)
        return self._hash_vector(phrase)

    def embed(self, phrase: str) -> np.ndarray:
        key = normalize_phrase(phrase)
        if not key:
            raise ValueError("cannot embed an empty phrase")
        if not self.memoize:
            return self._compute(key)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        vec = self._compute(key)
        vec.setflags(write=False)
        with self._lock:
            self._cache.setdefault(key, vec)
        return vec

    def matrix(self, phrases) -> np.ndarray:
        return np.array([self.embed(p) for p in phrases]).reshape(-1, self.dimension)

    def omega(self, a: str, b: str) -> float:
        return cosine(self.embed(a), self.embed(b))


def cosine(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        log.warning("cosine of a zero-norm vector; returning 0")
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(A, B) -> np.ndarray:
    """Pairwise cosine between rows of A and rows of B; zero rows give 0."""
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    na[na == 0] = np.inf
    nb[nb == 0] = np.inf
    return np.clip((A / na[:, None]) @ (B / nb[:, None]).T, -1.0, 1.0)
