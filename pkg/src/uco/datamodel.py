"""Record types and tab-separated file I/O shared across the package.

File kinds (UTF-8, ``\\n`` line endings, tab separated, no header):

* ``pairs.tsv``   query_id, query_text, title_id, title_text, relevance, centrality
* ``corpus.tsv``  title_id, title_text
* ``queries.tsv`` query_id, query_text  (written as ``dev_queries.tsv`` / ``test_queries.tsv``)
* ``qrels.tsv``   query_id, title_id, relevance, centrality
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

POSITIVE_MIN = 4  # relevance > 3
NEGATIVE_MAX = 2  # relevance < 3

CORPUS_FILE = "corpus.tsv"
DEV_QUERIES_FILE = "dev_queries.tsv"
TEST_QUERIES_FILE = "test_queries.tsv"
QRELS_FILE = "qrels.tsv"


class ValidationError(ValueError):
    """Malformed input data or a violated record invariant."""


@dataclass(frozen=True)
class GradedPair:
    query_id: str
    query_text: str
    title_id: str
    title_text: str
    relevance: int
    centrality: int

    def __post_init__(self):
        if not 1 <= self.relevance <= 5:
            raise ValidationError(f"grade out of range: {self.relevance}")
        if self.centrality not in (0, 1):
            raise ValidationError(f"centrality must be 0 or 1, got {self.centrality}")
        for name in ("query_id", "title_id", "query_text", "title_text"):
            _check_field(getattr(self, name), name)

    @property
    def is_positive(self) -> bool:
        return self.relevance >= POSITIVE_MIN

    @property
    def is_negative(self) -> bool:
        return self.relevance <= NEGATIVE_MAX


Judgment = Tuple[int, int]  # (relevance, centrality)


@dataclass
class EvalSplit:
    """A retrieval corpus with dev/test query sets and their judgments.

    ``qrels`` maps query_id -> {title_id: (relevance, centrality)}.
    """

    name: str
    corpus: List[Tuple[str, str]]
    dev_queries: List[Tuple[str, str]]
    test_queries: List[Tuple[str, str]]
    qrels: Dict[str, Dict[str, Judgment]] = field(default_factory=dict)

    def queries(self, which: str) -> List[Tuple[str, str]]:
        if which == "dev":
            return self.dev_queries
        if which == "test":
            return self.test_queries
        raise ValidationError(f"query set must be 'dev' or 'test', got {which!r}")

    def relevant(self, query_id: str) -> set:
        return {t for t, (rel, _) in self.qrels.get(query_id, {}).items() if rel >= POSITIVE_MIN}

    def validate(self) -> None:
        """Raise ValidationError if any split invariant is violated."""
        if not self.corpus:
            raise ValidationError(f"split {self.name!r}: empty corpus")
        corpus_ids = set()
        for tid, text in self.corpus:
            _check_field(tid, "title_id")
            _check_field(text, "title_text")
            if tid in corpus_ids:
                raise ValidationError(f"split {self.name!r}: duplicate corpus title_id {tid!r}")
            corpus_ids.add(tid)
        dev_ids = [q for q, _ in self.dev_queries]
        test_ids = [q for q, _ in self.test_queries]
        for qid, text in self.dev_queries + self.test_queries:
            _check_field(qid, "query_id")
            _check_field(text, "query_text")
        if len(set(dev_ids)) != len(dev_ids) or len(set(test_ids)) != len(test_ids):
            raise ValidationError(f"split {self.name!r}: duplicate query ids")
        overlap = set(dev_ids) & set(test_ids)
        if overlap:
            raise ValidationError(f"split {self.name!r}: dev and test share queries {sorted(overlap)[:5]}")
        for qid in dev_ids + test_ids:
            judged = self.qrels.get(qid)
            if not judged:
                raise ValidationError(f"split {self.name!r}: query {qid!r} has no qrels")
            rels = [rel for rel, _ in judged.values()]
            if not any(r >= POSITIVE_MIN for r in rels) or not any(r <= NEGATIVE_MAX for r in rels):
                raise ValidationError(
                    f"split {self.name!r}: query {qid!r} needs at least one positive and one negative title"
                )
        for qid, judged in self.qrels.items():
            for tid, (rel, cen) in judged.items():
                if tid not in corpus_ids:
                    raise ValidationError(f"split {self.name!r}: qrels title {tid!r} (query {qid!r}) not in corpus")
                if not 1 <= rel <= 5 or cen not in (0, 1):
                    raise ValidationError(f"split {self.name!r}: bad judgment for ({qid!r}, {tid!r})")


@dataclass
class RankedRun:
    """Per-query ranked lists of (title_id, score)."""

    rankings: Dict[str, List[Tuple[str, float]]]
    k_max: int

    def validate(self, corpus_size: int | None = None) -> None:
        for qid, ranked in self.rankings.items():
            if len(ranked) > self.k_max or (corpus_size is not None and len(ranked) > corpus_size):
                raise ValidationError(f"run: query {qid!r} list longer than allowed")
            ids = [t for t, _ in ranked]
            if len(set(ids)) != len(ids):
                raise ValidationError(f"run: duplicate title_id for query {qid!r}")
            scores = [s for _, s in ranked]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValidationError(f"run: scores increase down the list for query {qid!r}")

    def title_ids(self, query_id: str) -> List[str]:
        return [t for t, _ in self.rankings[query_id]]


def _check_field(value: str, name: str) -> None:
    if not isinstance(value, str) or not value.strip():
        raise ValidationError(f"{name} must be a non-empty string")
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValidationError(f"{name} contains a tab or newline: {value!r}")


def _read_rows(path, n_fields: int) -> Iterable[Tuple[int, List[str]]]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.endswith("\n"):
                line = line[:-1]
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise ValidationError(f"{path}:{lineno}: expected {n_fields} fields, got {len(parts)}")
            yield lineno, parts


def _parse_int(text: str, where: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{where}: non-integer {what} {text!r}") from None


def _write_rows(path, rows: Iterable[Iterable]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def load_pairs(path) -> List[GradedPair]:
    """Read a pairs.tsv file, rejecting the whole file on the first bad line."""
    pairs: List[GradedPair] = []
    seen = {}
    for lineno, (qid, qtext, tid, ttext, rel, cen) in _read_rows(path, 6):
        where = f"{path}:{lineno}"
        relevance = _parse_int(rel, where, "grade")
        centrality = _parse_int(cen, where, "centrality")
        if not 1 <= relevance <= 5:
            raise ValidationError(f"{where}: grade out of range: {relevance}")
        try:
            pair = GradedPair(qid, qtext, tid, ttext, relevance, centrality)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
        key = (qid, tid)
        if key in seen:
            raise ValidationError(f"{where}: duplicate pair ({qid!r}, {tid!r}), first seen at line {seen[key]}")
        seen[key] = lineno
        pairs.append(pair)
    return pairs


def save_pairs(pairs: Iterable[GradedPair], path) -> None:
    _write_rows(
        path,
        ((p.query_id, p.query_text, p.title_id, p.title_text, p.relevance, p.centrality) for p in pairs),
    )


def load_queries(path) -> List[Tuple[str, str]]:
    return [(qid, text) for _, (qid, text) in _read_rows(path, 2)]


def load_corpus(path) -> List[Tuple[str, str]]:
    return [(tid, text) for _, (tid, text) in _read_rows(path, 2)]


def load_qrels(path) -> Dict[str, Dict[str, Judgment]]:
    qrels: Dict[str, Dict[str, Judgment]] = {}
    for lineno, (qid, tid, rel, cen) in _read_rows(path, 4):
        where = f"{path}:{lineno}"
        judged = qrels.setdefault(qid, {})
        if tid in judged:
            raise ValidationError(f"{where}: duplicate pair ({qid!r}, {tid!r})")
        judged[tid] = (_parse_int(rel, where, "grade"), _parse_int(cen, where, "centrality"))
    return qrels


def save_split(split: EvalSplit, directory) -> None:
    """Write the four split files into ``directory`` (created if missing).

    The split name is not stored in the files; ``load_split`` takes it from
    the directory name unless one is given.
    """
    split.validate()
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create split directory {directory}: {exc}") from exc
    if not os.access(directory, os.W_OK):
        raise OSError(f"split directory {directory} is not writable")
    _write_rows(directory / CORPUS_FILE, split.corpus)
    _write_rows(directory / DEV_QUERIES_FILE, split.dev_queries)
    _write_rows(directory / TEST_QUERIES_FILE, split.test_queries)
    _write_rows(
        directory / QRELS_FILE,
        ((qid, tid, rel, cen) for qid in sorted(split.qrels) for tid, (rel, cen) in sorted(split.qrels[qid].items())),
    )


def load_split(directory, name: str | None = None) -> EvalSplit:
    directory = Path(directory)
    split = EvalSplit(
        name=name or directory.name,
        corpus=load_corpus(directory / CORPUS_FILE),
        dev_queries=load_queries(directory / DEV_QUERIES_FILE),
        test_queries=load_queries(directory / TEST_QUERIES_FILE),
        qrels=load_qrels(directory / QRELS_FILE),
    )
    split.validate()
    return split


def save_run(run: RankedRun, path) -> None:
    """run.tsv rows: query_id, rank (1-based), title_id, score."""
    _write_rows(
        path,
        (
            (qid, rank, tid, repr(float(score)))
            for qid, ranked in run.rankings.items()
            for rank, (tid, score) in enumerate(ranked, start=1)
        ),
    )


def load_run(path) -> RankedRun:
    rankings: Dict[str, List[Tuple[str, float]]] = {}
    for lineno, (qid, rank, tid, score) in _read_rows(path, 4):
        where = f"{path}:{lineno}"
        ranked = rankings.setdefault(qid, [])
        if _parse_int(rank, where, "rank") != len(ranked) + 1:
            raise ValidationError(f"{where}: rank {rank} out of sequence for query {qid!r}")
        try:
            value = float(score)
        except ValueError:
            raise ValidationError(f"{where}: non-numeric score {score!r}") from None
        if ranked and value > ranked[-1][1]:
            raise ValidationError(f"{where}: score {score} above the previous rank for query {qid!r}")
        if any(t == tid for t, _ in ranked):
            raise ValidationError(f"{where}: duplicate title_id {tid!r} for query {qid!r}")
        ranked.append((tid, value))
    k_max = max((len(r) for r in rankings.values()), default=0)
    run = RankedRun(rankings, k_max)
    try:
        run.validate()
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return run
