"""Centrality fine-tuning loop: sparse Adam on the embedding table under the chosen loss.

After each epoch two evaluators run on the dev data: a thresholded cosine
classifier of centrality, then retrieval over the split corpus. The epoch
with the best dev NDCG@10 is kept.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .datamodel import EvalSplit, GradedPair, ValidationError
from .encoder import EmbeddingModel, backward_batch, encode_batch, encode_many
from .losses import LossBatch, compute_loss
from .metrics import MetricConfig, aggregate
from .retrieval import batch_search, build_index

log = logging.getLogger(__name__)

SELECTION_METRIC = "NDCG@10"


class TrainingError(RuntimeError):
    """Numerical failure during training (non-finite loss or gradient)."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 2e-05
    weight_decay: float = 0.01
    max_epochs: int = 10
    margin: float = 0.5
    centrality_threshold: Union[float, str] = "auto"
    rng_seed: int = 0
    in_batch_negatives: bool = True
    loss: str = "dual"  # mnrl | ocl | dual
    softmax_mnrl: bool = False
    squared_positive: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.loss not in ("mnrl", "ocl", "dual"):
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.centrality_threshold != "auto" and not -1.0 < float(self.centrality_threshold) < 1.0:
            raise ValidationError("centrality_threshold must be in (-1, 1) or 'auto'")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_model(cls, model: EmbeddingModel) -> "AdamState":
        shape = model.table.shape
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass
class TextBatch:
    """One training batch before encoding: anchor query texts and their labelled titles."""

    anchors: List[str]
    titles: List[str]
    pair_anchor: np.ndarray
    labels: np.ndarray


@dataclass
class _QueryGroup:
    text: str
    positives: List[str]
    negatives: List[str]


def group_pairs(pairs: Sequence[GradedPair]) -> Dict[str, _QueryGroup]:
    """Trainable queries (at least one positive and one negative), keyed by query_id."""
    groups: Dict[str, _QueryGroup] = {}
    for p in pairs:
        g = groups.setdefault(p.query_id, _QueryGroup(p.query_text, [], []))
        if p.is_positive:
            g.positives.append(p.title_text)
        elif p.is_negative:
            g.negatives.append(p.title_text)
    return {q: g for q, g in sorted(groups.items()) if g.positives and g.negatives}


def make_batches(pairs: Sequence[GradedPair], cfg: TrainConfig, epoch: int,
                 groups: Dict[str, _QueryGroup] | None = None) -> List[TextBatch]:
    """Shuffle trainable queries with (seed, epoch) and cut them into batches.

    With in-batch negatives on, every other anchor's positives are appended to
    each anchor's negatives (label 0), skipping exact copies of its own positives.
    """
    groups = groups if groups is not None else group_pairs(pairs)
    if not groups:
        raise ValidationError("no trainable query (need both positive and negative titles)")
    qids = list(groups)
    perm = np.random.default_rng([cfg.rng_seed, epoch]).permutation(len(qids))
    order = [qids[i] for i in perm]
    batches = []
    for start in range(0, len(order), cfg.batch_size):
        members = [groups[q] for q in order[start:start + cfg.batch_size]]
        titles, anchor, labels = [], [], []
        for a, g in enumerate(members):
            own = set(g.positives)
            negs = list(g.negatives)
            if cfg.in_batch_negatives:
                for b, other in enumerate(members):
                    if b != a:
                        negs.extend(t for t in other.positives if t not in own)
            for t in g.positives:
                titles.append(t); anchor.append(a); labels.append(1)
            for t in negs:
                titles.append(t); anchor.append(a); labels.append(0)
        batches.append(TextBatch([g.text for g in members], titles, np.array(anchor), np.array(labels)))
    return batches


def adam_step(model: EmbeddingModel, rows: np.ndarray, grads: np.ndarray, state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam on the given rows, with decoupled weight decay on those rows only."""
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    m = b1 * state.m[rows] + (1.0 - b1) * grads
    v = b2 * state.v[rows] + (1.0 - b2) * grads * grads
    state.m[rows] = m
    state.v[rows] = v
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    current = model.table[rows].astype(np.float64)
    current *= 1.0 - cfg.learning_rate * cfg.weight_decay
    current -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    model.table[rows] = current


def train_step(model: EmbeddingModel, batch: TextBatch, state: AdamState, cfg: TrainConfig) -> float:
    """Encode, compute the loss, backpropagate to the table and apply one Adam step."""
    texts = list(dict.fromkeys(batch.anchors + batch.titles))
    where = {t: i for i, t in enumerate(texts)}
    anchor_idx = np.array([where[t] for t in batch.anchors])
    title_idx = np.array([where[t] for t in batch.titles])
    unit, norms, pool = encode_batch(texts, model)
    loss_batch = LossBatch(unit[anchor_idx], unit[title_idx], batch.pair_anchor, batch.labels, cfg.margin)
    result = compute_loss(cfg.loss, loss_batch, cfg.softmax_mnrl, cfg.squared_positive)
    upstream = np.zeros_like(unit)
    np.add.at(upstream, anchor_idx, result.grad_queries)
    np.add.at(upstream, title_idx, result.grad_titles)
    rows, grads = backward_batch(unit, norms, pool, upstream)
    if not np.isfinite(result.loss):
        raise TrainingError("non-finite loss")
    adam_step(model, rows, grads, state, cfg)
    return result.loss


def dev_pairs_from_split(split: EvalSplit, which: str = "dev") -> List[Tuple[str, str, int]]:
    """(query_text, title_text, centrality) for every judged pair of the chosen query set."""
    title_text = dict(split.corpus)
    out = []
    for qid, qtext in split.queries(which):
        for tid, (_, cen) in split.qrels[qid].items():
            out.append((qtext, title_text[tid], cen))
    return out


def _f1(pred: np.ndarray, gold: np.ndarray) -> float:
    tp = np.sum(pred & gold)
    denom = np.sum(pred) + np.sum(gold)
    return float(2 * tp / denom) if denom else 0.0


def eval_centrality(model: EmbeddingModel, pairs: Sequence[Tuple[str, str, int]],
                    threshold: Union[float, str] = "auto") -> Tuple[float, float, float]:
    """Classify a pair central iff cosine > threshold; returns (accuracy, F1, threshold used).

    ``"auto"`` sweeps 101 thresholds evenly over [-1, 1] and keeps the first F1 maximum.
    """
    if not pairs:
        raise ValidationError("empty dev pair set")
    queries = list(dict.fromkeys(q for q, _, _ in pairs))
    titles = list(dict.fromkeys(t for _, t, _ in pairs))
    qv = encode_many(queries, model)
    tv = encode_many(titles, model)
    qi = {t: i for i, t in enumerate(queries)}
    ti = {t: i for i, t in enumerate(titles)}
    a = np.array([qi[q] for q, _, _ in pairs])
    b = np.array([ti[t] for _, t, _ in pairs])
    cos = np.clip(np.einsum("nd,nd->n", qv[a], tv[b]), -1.0, 1.0)
    gold = np.array([c == 1 for _, _, c in pairs])
    if threshold == "auto":
        best = None
        for thr in np.linspace(-1.0, 1.0, 101):
            f1 = _f1(cos > thr, gold)
            if best is None or f1 > best[1]:
                best = (float(thr), f1)
        threshold = best[0]
    pred = cos > float(threshold)
    return float(np.mean(pred == gold)), _f1(pred, gold), float(threshold)


def retrieve(model: EmbeddingModel, split: EvalSplit, which: str = "dev", k: int = 10, index=None):
    """RankedRun of the chosen query set against the split corpus."""
    index = index if index is not None else build_index(split.corpus, model)
    queries = split.queries(which)
    vectors = encode_many([text for _, text in queries], model)
    return batch_search(index, vectors, k, query_ids=[q for q, _ in queries])


def eval_retrieval(model: EmbeddingModel, split: EvalSplit, which: str = "dev",
                   cfg: MetricConfig = MetricConfig()) -> Dict[str, float]:
    run = retrieve(model, split, which, k=max(max(cfg.cutoffs), cfg.mrr_depth))
    return aggregate(run, split.qrels, cfg)


@dataclass
class History:
    epochs: List[dict] = field(default_factory=list)
    best_epoch: int = 0

    def series(self, key: str) -> List[float]:
        return [row[key] for row in self.epochs]


def train(model: EmbeddingModel, train_pairs: Sequence[GradedPair], dev_split: EvalSplit,
          cfg: TrainConfig = TrainConfig()) -> Tuple[EmbeddingModel, History]:
    """Fine-tune a copy of ``model``; returns the best-on-dev copy and the per-epoch history."""
    model = model.copy()
    state = AdamState.for_model(model)
    groups = group_pairs(train_pairs)
    dev_pairs = dev_pairs_from_split(dev_split, "dev")
    history = History()
    best_score = -np.inf
    best = model.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for batch_id, batch in enumerate(make_batches(train_pairs, cfg, epoch, groups)):
            loss = train_step(model, batch, state, cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {batch_id}")
            losses.append(loss)
        acc, f1, thr = eval_centrality(model, dev_pairs, cfg.centrality_threshold)
        report = eval_retrieval(model, dev_split, "dev")
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "acc": acc, "f1": f1, "threshold": thr}
        row.update({k: v for k, v in report.items() if "@" in k})
        history.epochs.append(row)
        log.info("epoch %d loss %.4f acc %.4f f1 %.4f (thr %.2f) %s %.4f",
                 epoch, row["loss"], acc, f1, thr, SELECTION_METRIC, row[SELECTION_METRIC])
        if row[SELECTION_METRIC] > best_score:
            best_score = row[SELECTION_METRIC]
            history.best_epoch = epoch
            best = model.copy()
    return best, history


HISTORY_COLUMNS = ["epoch", "loss", "acc", "f1", "P@3", "P@5", "P@10", "R@3", "R@5", "R@10",
                   "NDCG@3", "NDCG@5", "NDCG@10", "MRR@10"]


def write_history(history: History, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(HISTORY_COLUMNS) + "\n")
        for row in history.epochs:
            fh.write("\t".join(str(row["epoch"]) if c == "epoch" else repr(float(row[c])) for c in HISTORY_COLUMNS) + "\n")
