"""Ranking and contrastive losses over unit-norm query/title embeddings.

Distances are cosine distances, ``d(u, v) = 1 - u.v``, so on unit vectors
``dd/du = -v`` and ``dd/dv = -u``. Gradients are returned with respect to
the unit vectors; the encoder maps them back through normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datamodel import ValidationError

SOFTMAX_SCALE = 20.0


@dataclass
class LossBatch:
    """Anchors plus a flat list of (anchor, title, label) pairs.

    ``titles[m]`` belongs to anchor ``pair_anchor[m]`` with centrality
    ``labels[m]``; label 1 titles are that anchor's positives, label 0 its
    negatives.
    """

    queries: np.ndarray  # (A, d)
    titles: np.ndarray  # (M, d)
    pair_anchor: np.ndarray  # (M,)
    labels: np.ndarray  # (M,)
    margin: float = 0.5

    def __post_init__(self):
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        self.titles = np.atleast_2d(np.asarray(self.titles, dtype=np.float64))
        self.pair_anchor = np.asarray(self.pair_anchor, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.queries.shape[1] != self.titles.shape[1]:
            raise ValidationError("dimension mismatch between queries and titles")
        if not (len(self.titles) == len(self.pair_anchor) == len(self.labels)):
            raise ValidationError("titles, pair_anchor and labels must align")
        if self.margin <= 0:
            raise ValidationError("margin must be positive")

    @classmethod
    def from_lists(cls, queries, positives: Sequence, negatives: Sequence, margin: float = 0.5) -> "LossBatch":
        """Build from per-anchor lists of positive and negative title vectors."""
        titles, anchor, labels = [], [], []
        for a, (pos, neg) in enumerate(zip(positives, negatives)):
            for vecs, y in ((pos, 1), (neg, 0)):
                for v in vecs:
                    titles.append(v)
                    anchor.append(a)
                    labels.append(y)
        dim = np.asarray(queries).shape[-1]
        return cls(queries, np.reshape(titles, (-1, dim)), anchor, labels, margin)

    def distances(self) -> np.ndarray:
        return 1.0 - np.einsum("md,md->m", self.queries[self.pair_anchor], self.titles)


@dataclass
class LossResult:
    loss: float
    grad_queries: np.ndarray
    grad_titles: np.ndarray
    mined: np.ndarray | None = None  # OCL: boolean mask over pairs
    warning: str | None = None
    parts: dict = field(default_factory=dict)


def distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(1.0 - np.clip(u @ v, -1.0, 1.0))


def _anchor_groups(batch: LossBatch):
    A = len(batch.queries)
    order = np.argsort(batch.pair_anchor, kind="stable")
    bounds = np.searchsorted(batch.pair_anchor[order], np.arange(A + 1))
    for a in range(A):
        idx = order[bounds[a]:bounds[a + 1]]
        lab = batch.labels[idx]
        yield a, idx[lab == 1], idx[lab == 0]


def mnrl(batch: LossBatch) -> LossResult:
    """Hinge form: sum over anchors, positives i, negatives j of max(0, d(q,p_i) - d(q,n_j) + margin)."""
    d = batch.distances()
    gq = np.zeros_like(batch.queries)
    gt = np.zeros_like(batch.titles)
    total = 0.0
    for a, pos, neg in _anchor_groups(batch):
        if len(pos) == 0 or len(neg) == 0:
            raise ValidationError(f"anchor {a} needs at least one positive and one negative")
        arg = d[pos][:, None] - d[neg][None, :] + batch.margin
        active = arg > 0
        total += float(arg[active].sum())
        n_pos_terms = active.sum(axis=1).astype(np.float64)
        n_neg_terms = active.sum(axis=0).astype(np.float64)
        q = batch.queries[a]
        gt[pos] -= n_pos_terms[:, None] * q
        gt[neg] += n_neg_terms[:, None] * q
        gq[a] += n_neg_terms @ batch.titles[neg] - n_pos_terms @ batch.titles[pos]
    return LossResult(total, gq, gt)


def mnrl_softmax(batch: LossBatch, scale: float = SOFTMAX_SCALE) -> LossResult:
    """Cross-entropy form: each positive competes against the anchor's negatives on scaled cosine."""
    sim = 1.0 - batch.distances()
    gq = np.zeros_like(batch.queries)
    gt = np.zeros_like(batch.titles)
    total = 0.0
    for a, pos, neg in _anchor_groups(batch):
        if len(pos) == 0 or len(neg) == 0:
            raise ValidationError(f"anchor {a} needs at least one positive and one negative")
        q = batch.queries[a]
        s_neg = scale * sim[neg]
        for i in pos:
            logits = np.concatenate(([scale * sim[i]], s_neg))
            top = logits.max()
            lse = top + np.log(np.exp(logits - top).sum())
            total += float(lse - logits[0])
            probs = np.exp(logits - lse)
            dlogit = probs.copy()
            dlogit[0] -= 1.0
            dsim = scale * dlogit
            gt[i] += dsim[0] * q
            gt[neg] += dsim[1:, None] * q
            gq[a] += dsim[0] * batch.titles[i] + dsim[1:] @ batch.titles[neg]
    return LossResult(total, gq, gt)


def ocl_mining(d: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Boolean mask of hard pairs.

    Hard positives lie farther than the closest negative; hard negatives lie
    closer than the farthest positive. Empty when either class is absent.
    """
    pos = labels == 1
    neg = labels == 0
    if not pos.any() or not neg.any():
        return np.zeros_like(pos)
    return (pos & (d > d[neg].min())) | (neg & (d < d[pos].max()))


def ocl(batch: LossBatch, squared_positive: bool = False) -> LossResult:
    """Online contrastive loss: Y*D + (1-Y)*max(margin - D, 0)^2 over mined pairs only."""
    d = batch.distances()
    gq = np.zeros_like(batch.queries)
    gt = np.zeros_like(batch.titles)
    labels = batch.labels
    if not (labels == 1).any() or not (labels == 0).any():
        return LossResult(0.0, gq, gt, np.zeros(len(d), dtype=bool), warning="single-class batch; OCL skipped")
    mined = ocl_mining(d, labels)
    hp = mined & (labels == 1)
    hn = mined & (labels == 0)
    gap = np.maximum(batch.margin - d[hn], 0.0)
    if squared_positive:
        loss = float(np.sum(d[hp] ** 2) + np.sum(gap**2))
        dpos = 2.0 * d[hp]
    else:
        loss = float(np.sum(d[hp]) + np.sum(gap**2))
        dpos = np.ones(hp.sum())
    # dL/dD per mined pair, then dD/dq = -t, dD/dt = -q
    dD = np.zeros(len(d))
    dD[hp] = dpos
    dD[hn] = -2.0 * gap
    gt -= dD[:, None] * batch.queries[batch.pair_anchor]
    np.add.at(gq, batch.pair_anchor, -dD[:, None] * batch.titles)
    return LossResult(loss, gq, gt, mined)


def dual_loss(batch: LossBatch, softmax_mnrl: bool = False, squared_positive: bool = False) -> LossResult:
    """Unweighted sum of the ranking and contrastive terms."""
    first = mnrl_softmax(batch) if softmax_mnrl else mnrl(batch)
    second = ocl(batch, squared_positive=squared_positive)
    return LossResult(
        first.loss + second.loss,
        first.grad_queries + second.grad_queries,
        first.grad_titles + second.grad_titles,
        second.mined,
        second.warning,
        {"mnrl": first.loss, "ocl": second.loss},
    )


LOSSES = {"mnrl": mnrl, "ocl": ocl, "dual": dual_loss}


def compute_loss(name: str, batch: LossBatch, softmax_mnrl: bool = False, squared_positive: bool = False) -> LossResult:
    if name == "mnrl":
        return mnrl_softmax(batch) if softmax_mnrl else mnrl(batch)
    if name == "ocl":
        return ocl(batch, squared_positive=squared_positive)
    if name == "dual":
        return dual_loss(batch, softmax_mnrl=softmax_mnrl, squared_positive=squared_positive)
    raise ValidationError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}")


def kink_distance(batch: LossBatch) -> float:
    """Smallest gap to a point where the losses are not differentiable.

    Covers hinge arguments, the contrastive margin, and the mining thresholds.
    """
    d = batch.distances()
    gaps = [np.inf]
    for _, pos, neg in _anchor_groups(batch):
        if len(pos) and len(neg):
            gaps.append(np.abs(d[pos][:, None] - d[neg][None, :] + batch.margin).min())
    pos = batch.labels == 1
    neg = batch.labels == 0
    if pos.any() and neg.any():
        gaps.append(np.abs(batch.margin - d[neg]).min())
        gaps.append(np.abs(d[pos] - d[neg].min()).min())
        gaps.append(np.abs(d[neg] - d[pos].max()).min())
    return float(min(gaps))
