"""Evaluation split construction from graded query-title pairs.

Splits: CQ (queries with both positive and negative titles), CQ-balanced,
CQ-common-str, CQ-alphanum. Positive means relevance above the positive
threshold, negative means relevance below the negative threshold; grade 3
is neither.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .datamodel import EvalSplit, GradedPair, ValidationError

log = logging.getLogger(__name__)

ENGLISH_ASCII_RATIO = 0.9


@dataclass(frozen=True)
class CurationConfig:
    positive_threshold: int = 3
    negative_threshold: int = 3
    dev_fraction: float = 0.8
    rng_seed: int = 0
    english_filter: bool = True

    def __post_init__(self):
        if self.negative_threshold > self.positive_threshold:
            raise ValidationError("negative_threshold must not exceed positive_threshold")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ValidationError("dev_fraction must be in (0, 1)")


def ascii_ratio(text: str) -> float:
    if not text:
        return 0.0
    return sum(" " <= ch <= "~" for ch in text) / len(text)


def looks_english(text: str) -> bool:
    """Crude stand-in for language identification: >= 90% printable ASCII."""
    return ascii_ratio(text) >= ENGLISH_ASCII_RATIO


def filter_pairs(pairs: Sequence[GradedPair], cfg: CurationConfig = CurationConfig()) -> List[GradedPair]:
    """Drop neutral grades, optionally non-English pairs, and repeated (query_id, title_id) keys."""
    out = []
    seen = set()
    for p in pairs:
        if not (p.relevance > cfg.positive_threshold or p.relevance < cfg.negative_threshold):
            continue
        if cfg.english_filter and not (looks_english(p.query_text) and looks_english(p.title_text)):
            continue
        key = (p.query_id, p.title_id)
        if key in seen:
            continue
        seen.add(key)
        out.append(p)
    return out


def partition_queries(query_ids: Sequence[str], dev_fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    """Sort ids, apply a seeded permutation, take the first share as dev."""
    ids = sorted(query_ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_dev = int(round(dev_fraction * len(ids)))
    if len(ids) >= 2:
        n_dev = min(max(n_dev, 1), len(ids) - 1)
    return sorted(shuffled[:n_dev]), sorted(shuffled[n_dev:])


def _judgments(p: GradedPair) -> Tuple[int, int]:
    return (p.relevance, p.centrality)


def build_cq(pairs: Sequence[GradedPair], cfg: CurationConfig = CurationConfig(), name: str = "CQ") -> EvalSplit:
    """Queries having at least one positive and one negative title, split dev/test."""
    by_query: Dict[str, List[GradedPair]] = OrderedDict()
    for p in pairs:
        by_query.setdefault(p.query_id, []).append(p)
    kept = {}
    for qid, group in by_query.items():
        has_pos = any(p.relevance > cfg.positive_threshold for p in group)
        has_neg = any(p.relevance < cfg.negative_threshold for p in group)
        if has_pos and has_neg:
            kept[qid] = [p for p in group
                         if p.relevance > cfg.positive_threshold or p.relevance < cfg.negative_threshold]
    if not kept:
        raise ValidationError("no query has both a positive and a negative title")
    qtext = {}
    titles: Dict[str, str] = {}
    qrels = {}
    for qid, group in kept.items():
        qtext[qid] = group[0].query_text
        qrels[qid] = {}
        for p in group:
            if titles.setdefault(p.title_id, p.title_text) != p.title_text:
                raise ValidationError(f"title_id {p.title_id!r} has conflicting texts")
            qrels[qid][p.title_id] = _judgments(p)
    dev, test = partition_queries(list(kept), cfg.dev_fraction, cfg.rng_seed)
    split = EvalSplit(
        name=name,
        corpus=sorted(titles.items()),
        dev_queries=[(q, qtext[q]) for q in dev],
        test_queries=[(q, qtext[q]) for q in test],
        qrels={q: dict(sorted(qrels[q].items())) for q in sorted(qrels)},
    )
    split.validate()
    return split


def _restrict(split: EvalSplit, keep: set, name: str, qrels=None) -> EvalSplit:
    if not keep:
        raise ValidationError(f"{name}: no qualifying query")
    qrels = qrels if qrels is not None else split.qrels
    new_qrels = {q: dict(qrels[q]) for q in sorted(keep)}
    used = {t for judged in new_qrels.values() for t in judged}
    out = EvalSplit(
        name=name,
        corpus=[(t, text) for t, text in split.corpus if t in used],
        dev_queries=[(q, s) for q, s in split.dev_queries if q in keep],
        test_queries=[(q, s) for q, s in split.test_queries if q in keep],
        qrels=new_qrels,
    )
    out.validate()
    return out


def _all_query_ids(split: EvalSplit) -> List[str]:
    return sorted(q for q, _ in split.dev_queries + split.test_queries)


def build_cq_balanced(split: EvalSplit, rng_seed: int = 0, name: str = "CQ-balanced") -> EvalSplit:
    """Per query, subsample the larger class down to the size of the smaller one."""
    rng = np.random.default_rng(rng_seed)
    qrels = {}
    for qid in _all_query_ids(split):
        judged = split.qrels[qid]
        pos = sorted(t for t, (rel, _) in judged.items() if rel >= 4)
        neg = sorted(t for t, (rel, _) in judged.items() if rel <= 2)
        n = min(len(pos), len(neg))
        if len(pos) > n:
            pos = sorted(rng.choice(pos, size=n, replace=False).tolist())
        elif len(neg) > n:
            neg = sorted(rng.choice(neg, size=n, replace=False).tolist())
        qrels[qid] = {t: judged[t] for t in sorted(pos + neg)}
    return _restrict(split, set(qrels), name, qrels)


def normalize_for_match(text: str) -> str:
    return " ".join(text.lower().split())


def build_cq_common_str(split: EvalSplit, name: str = "CQ-common-str") -> EvalSplit:
    """Queries whose full text appears inside both a positive and a negative title."""
    title_text = dict(split.corpus)
    qtext = dict(split.dev_queries + split.test_queries)
    keep = set()
    for qid in _all_query_ids(split):
        needle = normalize_for_match(qtext[qid])
        in_pos = in_neg = False
        for tid, (rel, _) in split.qrels[qid].items():
            if needle in normalize_for_match(title_text[tid]):
                in_pos |= rel >= 4
                in_neg |= rel <= 2
        if in_pos and in_neg:
            keep.add(qid)
    return _restrict(split, keep, name)


def is_alphanumeric_token(token: str) -> bool:
    return any(c.isalpha() for c in token) and any(c.isdigit() for c in token)


def is_alphanumeric_query(text: str) -> bool:
    return any(is_alphanumeric_token(tok) for tok in text.split())


def build_cq_alphanum(split: EvalSplit, name: str = "CQ-alphanum") -> EvalSplit:
    """Queries with at least one whitespace token mixing letters and digits."""
    keep = {q for q, text in split.dev_queries + split.test_queries if is_alphanumeric_query(text)}
    return _restrict(split, keep, name)


def build_all_splits(pairs: Sequence[GradedPair], cfg: CurationConfig = CurationConfig()) -> Dict[str, EvalSplit]:
    """All four splits; derived splits with no qualifying query are skipped with a warning."""
    cq = build_cq(filter_pairs(pairs, cfg), cfg)
    splits = {"CQ": cq, "CQ-balanced": build_cq_balanced(cq, cfg.rng_seed)}
    for name, builder in (("CQ-common-str", build_cq_common_str), ("CQ-alphanum", build_cq_alphanum)):
        try:
            splits[name] = builder(cq)
        except ValidationError as exc:
            log.warning("skipping %s: %s", name, exc)
    return splits


# -- correlations -------------------------------------------------------------

def _check_series(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("series must be 1-D and of equal length")
    if len(x) < 2:
        raise ValidationError("need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValidationError("correlation undefined for a constant series")
    return x, y


def pearson(x, y) -> float:
    x, y = _check_series(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    return float(np.clip(r, -1.0, 1.0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks, ties share the mean of their positions."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    mean_rank = (starts + ends + 1) / 2.0  # mean of positions start+1..end
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def spearman(x, y) -> float:
    x, y = _check_series(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def _tie_pairs(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True, axis=0)
    return float(np.sum(counts * (counts - 1) / 2.0))


def _count_inversions(a: np.ndarray) -> int:
    """Pairs i < j with a[i] > a[j] (strict), bottom-up merge counting."""
    n = len(a)
    # dense integer ranks so block offsets can be added without collisions
    vals = np.unique(a, return_inverse=True)[1].astype(np.int64)
    inversions = 0
    width = 1
    while width < n:
        block = np.arange(n) // width
        pair = block // 2
        is_right = (block % 2) == 1
        key = vals + pair * n
        left_keys = key[~is_right]
        right_keys = key[is_right]
        right_pair = pair[is_right]
        # left blocks are sorted, so left_keys is globally sorted
        left_end = np.searchsorted(left_keys, (right_pair + 1) * n, side="left")
        not_greater = np.searchsorted(left_keys, right_keys, side="right")
        inversions += int(np.sum(left_end - not_greater))
        order = np.argsort(key, kind="stable")
        vals = vals[order]
        width *= 2
    return inversions


def kendall_tau_b(x, y) -> float:
    x, y = _check_series(x, y)
    n = len(x)
    order = np.lexsort((y, x))
    ys = y[order]
    n0 = n * (n - 1) / 2.0
    tx = _tie_pairs(x)
    ty = _tie_pairs(y)
    txy = _tie_pairs(np.column_stack([x, y]))
    discordant = _count_inversions(ys)
    concordant_minus_discordant = n0 - tx - ty + txy - 2.0 * discordant
    tau = concordant_minus_discordant / np.sqrt((n0 - tx) * (n0 - ty))
    return float(np.clip(tau, -1.0, 1.0))


def correlation_stats(pairs: Sequence[GradedPair]) -> Tuple[float, float, float]:
    """(Pearson, Kendall tau-b, Spearman) between relevance grade and centrality."""
    rel = [p.relevance for p in pairs]
    cen = [p.centrality for p in pairs]
    return pearson(rel, cen), kendall_tau_b(rel, cen), spearman(rel, cen)


def write_correlations(stats: Tuple[float, float, float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label, value in zip(("pearson", "kendall", "spearman"), stats):
            fh.write(f"{label}\t{value:.4f}\n")
