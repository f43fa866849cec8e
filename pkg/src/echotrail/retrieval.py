"""Hybrid dense/sparse ranking of memory records against a task instruction.

Score(record, I) = alpha * dense + (1 - alpha) * sparse, where dense is the
intent-embedding cosine mapped to [0, 1] and sparse is BM25 min-max
normalised over the candidate set for this query.
"""

from __future__ import annotations

import math
import random
import weakref
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import TaskInstruction
from .memory import MemoryDB, MemoryRecord, record_document
from .text import DEFAULT_DIM, Embedder, embed, tokenize

MODES = ("hybrid", "dense", "sparse", "random")


class StaleIndexError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = 0.5
    K: int = 2
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    embed_dim: int = DEFAULT_DIM
    mode: str = "hybrid"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        if self.mode not in MODES:
            raise ValueError(f"unknown retrieval mode {self.mode!r}")


class SparseIndex:
    """Inverted BM25 index over a fixed snapshot of records."""

    def __init__(self, records: Sequence[MemoryRecord], version: int = 0,
                 k1: float = 1.2, b: float = 0.75):
        self.version = version
        self.k1, self.b = k1, b
        self.ids = [r.id for r in records]
        self.row = {rid: i for i, rid in enumerate(self.ids)}
        self.doc_tf: list[Counter] = []
        self.doc_len = np.zeros(len(records), dtype=np.float64)
        self.df: Counter = Counter()
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for i, r in enumerate(records):
            toks = tokenize(record_document(r.abstracted))
            tf = Counter(toks)
            self.doc_tf.append(tf)
            self.doc_len[i] = len(toks)
            for term, n in tf.items():
                self.df[term] += 1
                self.postings.setdefault(term, []).append((i, n))
        self.N = len(records)
        self.avglen = float(self.doc_len.mean()) if self.N else 0.0

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def _term_weight(self, tf: int, length: float) -> float:
        norm = 1.0 - self.b + self.b * (length / self.avglen if self.avglen else 0.0)
        return tf * (self.k1 + 1.0) / (tf + self.k1 * norm)

    def score_row(self, query_tokens: Sequence[str], i: int) -> float:
        tf = self.doc_tf[i]
        total = 0.0
        for t in query_tokens:
            n = tf.get(t, 0)
            if n:
                total += self.idf(t) * self._term_weight(n, self.doc_len[i])
        return total

    def score_all(self, query_tokens: Sequence[str]) -> np.ndarray:
        # accumulate in query-token order so each row sums exactly as score_row does
        scores = np.zeros(self.N, dtype=np.float64)
        for t in query_tokens:
            plist = self.postings.get(t)
            if not plist:
                continue
            idf = self.idf(t)
            for i, n in plist:
                scores[i] += idf * self._term_weight(n, self.doc_len[i])
        return scores


class DenseIndex:
    def __init__(self, records: Sequence[MemoryRecord], version: int = 0, dim: int = DEFAULT_DIM):
        self.version = version
        self.ids = [r.id for r in records]
        self.matrix = (np.array([r.intent_embedding for r in records], dtype=np.float64)
                       if records else np.zeros((0, dim)))

    def cosine_all(self, qvec: np.ndarray) -> np.ndarray:
        if not self.ids:
            return np.zeros(0)
        return self.matrix @ qvec


def dense_score(query_vec: np.ndarray, rec: MemoryRecord) -> float:
    v = rec.vector()
    if not np.any(query_vec) or not np.any(v):
        return 0.0
    return float(np.dot(query_vec, v))


def sparse_score(query_tokens: Sequence[str], rec: MemoryRecord, index: SparseIndex) -> float:
    i = index.row.get(rec.id)
    if i is None or index.doc_len[i] != rec.token_count:
        raise StaleIndexError(f"record {rec.id} is not in index snapshot v{index.version}")
    return index.score_row(query_tokens, i)


def minmax(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return x
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


class Retriever:
    """Owns index snapshots for one memory DB and rebuilds them when the DB changes."""

    def __init__(self, db: MemoryDB, cfg: RetrievalConfig = RetrievalConfig(),
                 embedder: Embedder = embed):
        self.db = db
        self.cfg = cfg
        self.embedder = embedder
        self._snap: Optional[tuple] = None

    def indexes(self) -> tuple[tuple[MemoryRecord, ...], SparseIndex, DenseIndex]:
        records, version = self.db.snapshot()
        if self._snap is None or self._snap[0] != version:
            self._snap = (version, records,
                          SparseIndex(records, version, self.cfg.bm25_k1, self.cfg.bm25_b),
                          DenseIndex(records, version, self.cfg.embed_dim))
        _, records, sparse, dense = self._snap
        return records, sparse, dense

    def rank(self, instruction: TaskInstruction | str) -> list[tuple[MemoryRecord, float]]:
        text = instruction.text if isinstance(instruction, TaskInstruction) else instruction
        records, sparse, dense = self.indexes()
        if not records:
            return []
        if sparse.version != self.db.version:
            raise StaleIndexError("index snapshot is older than the memory DB")
        qvec = self.embedder(text)
        cos = dense.cosine_all(qvec) if np.any(qvec) else np.zeros(len(records))
        d = (1.0 + cos) / 2.0
        s = minmax(sparse.score_all(tokenize(text)))
        mode, a = self.cfg.mode, self.cfg.alpha
        if mode == "dense":
            a = 1.0
        elif mode == "sparse":
            a = 0.0
        combined = a * d + (1.0 - a) * s
        order = sorted(range(len(records)), key=lambda i: (-combined[i], i))
        return [(records[i], float(combined[i])) for i in order]

    def topk(self, instruction: TaskInstruction | str, k: Optional[int] = None,
             rng: Optional[random.Random] = None) -> list[MemoryRecord]:
        k = self.cfg.K if k is None else k
        if k <= 0:
            return []
        if self.cfg.mode == "random":
            records, _ = self.db.snapshot()
            rng = rng or random.Random(0)
            idx = sorted(rng.sample(range(len(records)), min(k, len(records))))
            return [records[i] for i in idx]
        return [r for r, _ in self.rank(instruction)[:k]]


# one retriever per (live DB, config) so repeated calls reuse the index snapshot
_retrievers: dict[tuple[int, RetrievalConfig], tuple[weakref.ref, Retriever]] = {}


def _retriever(db: MemoryDB, cfg: RetrievalConfig) -> Retriever:
    key = (id(db), cfg)
    hit = _retrievers.get(key)
    if hit is None or hit[0]() is not db:
        for k in [k for k, (ref, _) in _retrievers.items() if ref() is None]:
            del _retrievers[k]
        hit = (weakref.ref(db), Retriever(db, cfg))
        _retrievers[key] = hit
    return hit[1]


def hybrid_rank(instruction: TaskInstruction | str, db: MemoryDB,
                cfg: RetrievalConfig = RetrievalConfig()) -> list[tuple[MemoryRecord, float]]:
    return _retriever(db, cfg).rank(instruction)


def retrieve_topk(instruction: TaskInstruction | str, db: MemoryDB,
                  cfg: RetrievalConfig = RetrievalConfig(),
                  rng: Optional[random.Random] = None) -> list[MemoryRecord]:
    return _retriever(db, cfg).topk(instruction, rng=rng)
