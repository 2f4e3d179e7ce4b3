"""Exact brute-force cosine top-k over a corpus embedding matrix.

Scores are float32 values computed from float32 embeddings with float64
accumulation. Ties are broken by ascending title_id.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .datamodel import RankedRun, ValidationError
from .encoder import EmbeddingModel, encode_many

DEFAULT_BLOCK = 128


@dataclass
class Index:
    matrix: np.ndarray  # (n, dim) float32, unit rows
    ids: List[str]
    _scoring: np.ndarray = field(init=False, repr=False)
    _id_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or len(self.ids) != self.matrix.shape[0]:
            raise ValidationError("index matrix rows must match ids")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate title_id in index")
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        if len(norms) and np.abs(norms - 1.0).max() > 1e-6:
            raise ValidationError("index rows must be unit-norm")
        self._scoring = self.matrix.astype(np.float64)
        # position of each row in lexicographic title_id order
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_vectors(cls, vectors, ids: Sequence[str]) -> "Index":
        vectors = np.asarray(vectors, dtype=np.float64)
        vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        return cls(vectors.astype(np.float32), list(ids))


def build_index(corpus: Sequence[Tuple[str, str]], model: EmbeddingModel) -> Index:
    if not corpus:
        raise ValidationError("cannot index an empty corpus")
    ids = [tid for tid, _ in corpus]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate title_id in corpus")
    for tid, text in corpus:
        if not text.strip():
            raise ValidationError(f"cannot encode title {tid!r}: empty text")
    vectors = encode_many([text for _, text in corpus], model)
    return Index(vectors.astype(np.float32), ids)


def _score_block(index: Index, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float32).astype(np.float64)
    if q.shape[1] != index.dim:
        raise ValidationError(f"query dimension {q.shape[1]} != index dimension {index.dim}")
    # a single row would go through a different BLAS kernel; keep every block on the same path
    if len(q) == 1:
        return (np.vstack([q, q]) @ index._scoring.T)[:1].astype(np.float32)
    return (q @ index._scoring.T).astype(np.float32)


def _select(index: Index, scores: np.ndarray, k: int) -> List[Tuple[str, float]]:
    n = len(scores)
    if k >= n:
        cand = np.arange(n)
    else:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    order = np.lexsort((index._id_rank[cand], -scores[cand]))[:k]
    chosen = cand[order]
    return [(index.ids[i], float(scores[i])) for i in chosen]


def top_k(index: Index, query_vec, k: int) -> List[Tuple[str, float]]:
    """The k best (title_id, score) by descending cosine, ties by ascending title_id."""
    if len(index) == 0:
        raise ValidationError("empty index")
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = _score_block(index, np.atleast_2d(query_vec))[0]
    return _select(index, scores, k)


def batch_search(index: Index, queries, k: int, query_ids: Sequence[str] | None = None,
                 block_size: int = DEFAULT_BLOCK) -> RankedRun:
    """``top_k`` for every query, scored in blocks of ``block_size`` queries."""
    if len(index) == 0:
        raise ValidationError("empty index")
    if k < 1 or block_size < 1:
        raise ValidationError("k and block_size must be >= 1")
    queries = np.atleast_2d(np.asarray(queries))
    if query_ids is None:
        query_ids = [str(i) for i in range(len(queries))]
    if len(query_ids) != len(queries):
        raise ValidationError("query_ids must match queries")
    rankings = {}
    for start in range(0, len(queries), block_size):
        block = _score_block(index, queries[start:start + block_size])
        for offset, scores in enumerate(block):
            rankings[query_ids[start + offset]] = _select(index, scores, k)
    return RankedRun(rankings, k)
