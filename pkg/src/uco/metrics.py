"""Ranking metrics: P@k, R@k, NDCG@k, MRR, and macro aggregation over queries."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from .datamodel import POSITIVE_MIN, RankedRun, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricConfig:
    cutoffs: tuple = (3, 5, 10)
    mrr_depth: int = 10
    gain_mode: str = "binary"  # or "graded"

    def __post_init__(self):
        if not self.cutoffs or any(k < 1 for k in self.cutoffs) or list(self.cutoffs) != sorted(self.cutoffs):
            raise ValidationError("cutoffs must be positive and sorted")
        if self.mrr_depth < 1:
            raise ValidationError("mrr_depth must be >= 1")
        if self.gain_mode not in ("binary", "graded"):
            raise ValidationError(f"unknown gain_mode {self.gain_mode!r}")


def _hits(ranking: Sequence[str], relevant, k: int) -> np.ndarray:
    return np.fromiter((t in relevant for t in ranking[:k]), dtype=bool, count=min(k, len(ranking)))


def precision_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    if k < 1:
        raise ValidationError("k must be >= 1")
    return float(_hits(ranking, relevant, k).sum()) / k


def recall_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    if not relevant:
        raise ValidationError("recall undefined for a query without relevant titles")
    return float(_hits(ranking, relevant, k).sum()) / len(relevant)


def _gain(relevance: int, gain_mode: str) -> float:
    if gain_mode == "binary":
        return 1.0 if relevance >= POSITIVE_MIN else 0.0
    return float(2**relevance - 1)


def ndcg_at_k(ranking: Sequence[str], judgments: Mapping[str, tuple], k: int, gain_mode: str = "binary") -> float:
    """``judgments`` maps title_id -> (relevance, centrality) for one query; unjudged titles gain 0."""
    gains = np.array([_gain(judgments[t][0], gain_mode) if t in judgments else 0.0 for t in ranking[:k]])
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    ideal = np.sort([_gain(rel, gain_mode) for rel, _ in judgments.values()])[::-1][:k]
    idcg = float(ideal @ discounts[: len(ideal)])
    if idcg == 0.0:
        raise ValidationError("IDCG is zero; query has no relevant titles")
    return float(gains @ discounts[: len(gains)]) / idcg


def reciprocal_rank(ranking: Sequence[str], relevant, depth: int) -> float:
    for rank, t in enumerate(ranking[:depth], start=1):
        if t in relevant:
            return 1.0 / rank
    return 0.0


def mrr(run: RankedRun, qrels: Mapping[str, Mapping[str, tuple]], depth: int = 10) -> float:
    """Mean over the run's queries of 1/rank of the first relevant title within ``depth`` (else 0)."""
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    values = [
        reciprocal_rank(run.title_ids(q), relevant_titles(qrels.get(q, {})), depth) for q in run.rankings
    ]
    return float(np.mean(values)) if values else 0.0


def relevant_titles(judgments: Mapping[str, tuple]) -> set:
    return {t for t, (rel, _) in judgments.items() if rel >= POSITIVE_MIN}


def metric_names(cfg: MetricConfig = MetricConfig()) -> list:
    names = [f"P@{k}" for k in cfg.cutoffs] + [f"R@{k}" for k in cfg.cutoffs]
    names += [f"NDCG@{k}" for k in cfg.cutoffs] + [f"MRR@{cfg.mrr_depth}"]
    return names


def per_query(ranking: Sequence[str], judgments: Mapping[str, tuple], cfg: MetricConfig) -> Dict[str, float]:
    relevant = relevant_titles(judgments)
    out = {}
    for k in cfg.cutoffs:
        out[f"P@{k}"] = precision_at_k(ranking, relevant, k)
    for k in cfg.cutoffs:
        out[f"R@{k}"] = recall_at_k(ranking, relevant, k)
    for k in cfg.cutoffs:
        out[f"NDCG@{k}"] = ndcg_at_k(ranking, judgments, k, cfg.gain_mode)
    out[f"MRR@{cfg.mrr_depth}"] = reciprocal_rank(ranking, relevant, cfg.mrr_depth)
    return out


def aggregate(run: RankedRun, qrels: Mapping[str, Mapping[str, tuple]], cfg: MetricConfig = MetricConfig()) -> Dict[str, float]:
    """Macro-average every metric over the run's queries.

    Queries without any relevant title are skipped (their count is returned
    under ``"excluded"``); a run query absent from ``qrels`` is an error.
    """
    rows = []
    excluded = 0
    for qid in run.rankings:
        if qid not in qrels:
            raise ValidationError(f"query {qid!r} in run has no qrels")
        if not relevant_titles(qrels[qid]):
            excluded += 1
            continue
        rows.append(per_query(run.title_ids(qid), qrels[qid], cfg))
    if excluded:
        log.warning("excluded %d queries without relevant titles", excluded)
    names = metric_names(cfg)
    report = {name: float(np.mean([r[name] for r in rows])) if rows else 0.0 for name in names}
    report["queries"] = len(rows)
    report["excluded"] = excluded
    return report


def format_report(report: Mapping[str, float], cfg: MetricConfig = MetricConfig()) -> Dict[str, str]:
    """Table-style strings: P/R as percentages (2 dp), NDCG/MRR as fractions (4 dp)."""
    out = {}
    for name in metric_names(cfg):
        value = report[name]
        out[name] = f"{100 * value:.2f}" if name[0] in "PR" else f"{value:.4f}"
    return out


def write_report(rows: Iterable[tuple], path, cfg: MetricConfig = MetricConfig()) -> None:
    """report.tsv: a header line, then one ``label`` + formatted-metrics row per report."""
    names = metric_names(cfg)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["run"] + names) + "\n")
        for label, report in rows:
            formatted = format_report(report, cfg)
            fh.write("\t".join([label] + [formatted[n] for n in names]) + "\n")
