"""Hashed character n-gram embedding model with mean pooling and L2 normalization.

A single shared table embeds both queries and titles. Training code uses the
batched helpers (:func:`pooling_matrix`, :func:`encode_batch`,
:func:`backward_batch`); the single-text functions are thin wrappers.

Checkpoint format (all integers little-endian)::

    8 bytes   magic  b"UCOEMB01"
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON header: {"dim", "n_buckets", "ngram_min", "ngram_max",
              "include_whole_tokens", "hash_seed"}
    n_buckets * dim * 4 bytes   float32 table, row-major, little-endian
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .datamodel import ValidationError

DEGENERATE_NORM = 1e-12
CHECKPOINT_MAGIC = b"UCOEMB01"


@dataclass(frozen=True)
class FeaturizerConfig:
    ngram_min: int = 3
    ngram_max: int = 5
    include_whole_tokens: bool = True
    n_buckets: int = 2**18
    hash_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ValidationError("need 1 <= ngram_min <= ngram_max")
        if self.n_buckets < 2:
            raise ValidationError("n_buckets must be >= 2")


@dataclass
class EmbeddingModel:
    table: np.ndarray  # (n_buckets, dim)
    featurizer: FeaturizerConfig

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[0] != self.featurizer.n_buckets:
            raise ValidationError("table must have shape (n_buckets, dim)")
        if self.table.shape[1] < 2:
            raise ValidationError("dim must be >= 2")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.table.copy(), self.featurizer)


def init_model(dim: int = 64, featurizer: FeaturizerConfig | None = None, seed: int = 0,
               dtype=np.float32) -> EmbeddingModel:
    """Uniform init in [-0.5/dim, 0.5/dim]."""
    featurizer = featurizer or FeaturizerConfig()
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    table = rng.uniform(-bound, bound, size=(featurizer.n_buckets, dim)).astype(dtype)
    return EmbeddingModel(table, featurizer)


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def _hash(feature: str, cfg: FeaturizerConfig) -> int:
    digest = hashlib.blake2b(
        feature.encode("utf-8"), digest_size=8, key=cfg.hash_seed.to_bytes(8, "little", signed=True)
    ).digest()
    return int.from_bytes(digest, "little") % cfg.n_buckets


def feature_strings(text: str, cfg: FeaturizerConfig) -> list[str]:
    """Unhashed features: ``g:`` boundary-marked char n-grams, ``w:`` whole tokens."""
    norm = normalize_text(text)
    if not norm:
        raise ValidationError("cannot featurize empty text")
    out = []
    for token in norm.split(" "):
        marked = f"<{token}>"
        for n in range(cfg.ngram_min, cfg.ngram_max + 1):
            out.extend("g:" + marked[i:i + n] for i in range(len(marked) - n + 1))
        if cfg.include_whole_tokens:
            out.append("w:" + token)
        if len(marked) < cfg.ngram_min and not cfg.include_whole_tokens:
            out.append("g:" + marked)
    return out


@lru_cache(maxsize=2**17)
def _featurize_cached(text: str, cfg: FeaturizerConfig) -> np.ndarray:
    ids = np.fromiter((_hash(f, cfg) for f in feature_strings(text, cfg)), dtype=np.int64)
    ids.setflags(write=False)
    return ids


def featurize(text: str, cfg: FeaturizerConfig) -> np.ndarray:
    """Bucket ids (with repeats) for ``text``, in emission order."""
    return _featurize_cached(text, cfg)


def collision_rate(texts: Sequence[str], cfg: FeaturizerConfig) -> float:
    """Fraction of distinct features lost to bucket sharing: 1 - occupied/distinct."""
    distinct = set()
    for text in texts:
        distinct.update(feature_strings(text, cfg))
    if not distinct:
        return 0.0
    buckets = {_hash(f, cfg) for f in distinct}
    return 1.0 - len(buckets) / len(distinct)


def pooling_matrix(texts: Sequence[str], model: EmbeddingModel) -> sp.csr_matrix:
    """Sparse (len(texts), n_buckets) matrix whose rows average the text's feature rows."""
    indptr = [0]
    indices = []
    data = []
    for text in texts:
        ids = featurize(text, model.featurizer)
        uniq, counts = np.unique(ids, return_counts=True)
        indices.append(uniq)
        data.append(counts / len(ids))
        indptr.append(indptr[-1] + len(uniq))
    return sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.asarray(indptr)),
        shape=(len(texts), model.featurizer.n_buckets),
    )


def _pool(pool: sp.csr_matrix, table: np.ndarray) -> np.ndarray:
    # gather only the touched rows so float32 tables are promoted row-wise
    cols = np.unique(pool.indices)
    sub = pool[:, cols]
    return np.asarray(sub @ table[cols].astype(np.float64))


def encode_batch(texts: Sequence[str], model: EmbeddingModel, pool: sp.csr_matrix | None = None):
    """Encode many texts. Returns (unit vectors Y, pre-norm norms, pooling matrix)."""
    if pool is None:
        pool = pooling_matrix(texts, model)
    raw = _pool(pool, model.table)
    norms = np.linalg.norm(raw, axis=1)
    out = np.zeros_like(raw)
    ok = norms >= DEGENERATE_NORM
    out[ok] = raw[ok] / norms[ok, None]
    out[~ok, 0] = 1.0
    return out, norms, pool


def encode(text: str, model: EmbeddingModel) -> np.ndarray:
    return encode_batch([text], model)[0][0]


def encode_many(texts: Sequence[str], model: EmbeddingModel, chunk: int = 4096) -> np.ndarray:
    """Unit vectors for a long list of texts, in chunks to bound memory."""
    if not texts:
        return np.zeros((0, model.dim))
    parts = [encode_batch(texts[i:i + chunk], model)[0] for i in range(0, len(texts), chunk)]
    return np.vstack(parts)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.clip(u @ v, -1.0, 1.0))


def normalization_backward(unit: np.ndarray, norms: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-normalization vectors: (I - y y^T) g / |x|, zero where degenerate."""
    radial = np.sum(unit * upstream, axis=1, keepdims=True)
    grad = np.zeros_like(upstream)
    ok = norms >= DEGENERATE_NORM
    grad[ok] = (upstream[ok] - radial[ok] * unit[ok]) / norms[ok, None]
    return grad


def backward_batch(unit: np.ndarray, norms: np.ndarray, pool: sp.csr_matrix, upstream: np.ndarray):
    """Sparse table gradient for a batch: returns (row ids, row gradients)."""
    grad_raw = normalization_backward(unit, norms, upstream)
    rows = np.unique(pool.indices)
    sub = pool[:, rows]
    return rows, np.asarray(sub.T @ grad_raw)


def encode_backward(text: str, model: EmbeddingModel, upstream_grad: np.ndarray):
    """Table gradient for one text given d(loss)/d(encode(text)).

    Returns ``(rows, grads)`` with unique bucket ids and their accumulated
    gradients; repeated features receive one share per occurrence.
    """
    unit, norms, pool = encode_batch([text], model)
    upstream = np.asarray(upstream_grad, dtype=np.float64).reshape(1, -1)
    if upstream.shape[1] != model.dim:
        raise ValidationError("upstream gradient has wrong dimension")
    return backward_batch(unit, norms, pool, upstream)


def save_model(model: EmbeddingModel, path) -> None:
    cfg = model.featurizer
    header = json.dumps(
        {"dim": model.dim, **asdict(cfg)}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(model.table, dtype="<f4").tobytes())


def load_model(path) -> EmbeddingModel:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{path}: no such checkpoint")
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a model checkpoint")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size).decode("utf-8"))
        dim = header.pop("dim")
        cfg = FeaturizerConfig(**header)
        buf = fh.read()
    expected = cfg.n_buckets * dim * 4
    if len(buf) != expected:
        raise ValidationError(f"{path}: table has {len(buf)} bytes, expected {expected}")
    table = np.frombuffer(buf, dtype="<f4").reshape(cfg.n_buckets, dim).astype(np.float32)
    return EmbeddingModel(table, cfg)
