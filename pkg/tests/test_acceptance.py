"""Acceptance suite: one check per numbered criterion, each printing a PASS/FAIL line.

The lines are printed as each check finishes and again as a block at the end
of the pytest run. Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import json
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest
from scipy import stats

from oracles import central_difference, full_sort_topk, naive_ndcg, naive_precision, naive_recall, naive_rr
from uco import cli
from uco.curation import (
    CurationConfig,
    build_cq,
    build_cq_balanced,
    build_cq_common_str,
    correlation_stats,
    filter_pairs,
    kendall_tau_b,
    pearson,
    spearman,
)
from uco.datamodel import RankedRun
from uco.encoder import init_model, normalization_backward
from uco.losses import LossBatch, dual_loss, kink_distance, mnrl, ocl
from uco.metrics import mrr, ndcg_at_k, precision_at_k, recall_at_k
from uco.retrieval import Index, batch_search, top_k
from uco.seeding import child_seed
from uco.synthgen import GenConfig, generate, make_benchmark
from uco.trainer import TrainConfig

RESULTS = {}
SEEDS = (0, 1, 2)


def record(capsys, number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# 1 ---------------------------------------------------------------------------------

def _loss_of_raw(fn, raw_q, raw_t, anchor, labels, margin):
    return fn(LossBatch(_unit(raw_q), _unit(raw_t), anchor, labels, margin)).loss


def test_criterion_1_gradients(capsys):
    rng = np.random.default_rng(2024)
    worst, checked, skipped = 0.0, 0, 0
    start = time.perf_counter()
    while checked < 100:
        dim = int(rng.integers(8, 65))
        n_pos, n_neg = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        raw_q = rng.standard_normal((1, dim)) * rng.uniform(0.5, 2.0)
        raw_t = rng.standard_normal((n_pos + n_neg, dim)) * rng.uniform(0.5, 2.0, size=(n_pos + n_neg, 1))
        anchor = np.zeros(n_pos + n_neg, dtype=np.int64)
        labels = np.array([1] * n_pos + [0] * n_neg)
        margin = float(rng.uniform(0.1, 1.0))
        batch = LossBatch(_unit(raw_q), _unit(raw_t), anchor, labels, margin)
        if kink_distance(batch) < 1e-6:
            skipped += 1
            continue
        for fn in (mnrl, ocl, dual_loss):
            res = fn(batch)
            gq = normalization_backward(batch.queries, np.linalg.norm(raw_q, axis=1), res.grad_queries)
            gt = normalization_backward(batch.titles, np.linalg.norm(raw_t, axis=1), res.grad_titles)
            fq = central_difference(lambda x: _loss_of_raw(fn, x, raw_t, anchor, labels, margin), raw_q, h=1e-5)
            ft = central_difference(lambda x: _loss_of_raw(fn, raw_q, x, anchor, labels, margin), raw_t, h=1e-5)
            analytic = np.concatenate([gq.ravel(), gt.ravel()])
            numeric = np.concatenate([fq.ravel(), ft.ravel()])
            scale = np.abs(numeric).max()
            if scale < 1e-8:
                # loss locally flat: both gradients must vanish
                err = np.abs(analytic).max()
            else:
                err = np.abs(analytic - numeric).max() / scale
            worst = max(worst, err)
        checked += 1
    took = time.perf_counter() - start
    record(capsys, 1, worst < 1e-4 and took < 60,
           f"max relative gradient error {worst:.2e} over {checked} batches x 3 losses "
           f"({skipped} near-kink skipped), {took:.1f}s")


# 2 ---------------------------------------------------------------------------------

def test_criterion_2_metrics(capsys):
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(5, 40))
        ids = [f"t{i}" for i in range(n)]
        judged = rng.choice(n, size=int(rng.integers(2, n)), replace=False)
        judgments = {ids[i]: (int(rng.integers(1, 6)), 0) for i in judged}
        judgments[ids[judged[0]]] = (int(rng.integers(4, 6)), 1)
        ranking = [ids[i] for i in rng.permutation(n)[: int(rng.integers(1, n + 1))]]
        relevant = {t for t, (r, _) in judgments.items() if r > 3}
        for k in (3, 5, 10):
            worst = max(worst,
                        abs(precision_at_k(ranking, relevant, k) - naive_precision(ranking, relevant, k)),
                        abs(recall_at_k(ranking, relevant, k) - naive_recall(ranking, relevant, k)),
                        abs(ndcg_at_k(ranking, judgments, k) - naive_ndcg(ranking, judgments, k)))
        run = RankedRun({"q": [(t, 0.0) for t in ranking]}, len(ranking))
        worst = max(worst, abs(mrr(run, {"q": judgments}, 10) - naive_rr(ranking, relevant, 10)))
    hand = ndcg_at_k(["a", "b", "c"], {"a": (5, 1), "c": (5, 1)}, 3)
    hand_ok = abs(hand - (1 + 0.5) / (1 + 1 / np.log2(3))) < 1e-12 and round(hand, 4) == 0.9197
    took = time.perf_counter() - start
    record(capsys, 2, worst <= 1e-12 and hand_ok and took < 60,
           f"max deviation from naive metrics {worst:.1e} on 1000 instances, hand NDCG {hand:.4f}, {took:.1f}s")


# 3 ---------------------------------------------------------------------------------

def test_criterion_3_retrieval(capsys):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    mismatches = 0
    for trial in range(100):
        n, dim = int(rng.integers(1, 1001)), int(rng.integers(2, 65))
        matrix = _unit(rng.standard_normal((n, dim))).astype(np.float32)
        if trial % 10 == 0:  # force exact ties
            matrix[n // 2:] = matrix[: n - n // 2]
        ids = [f"t{i:04d}" for i in rng.permutation(n)]
        index = Index.from_vectors(matrix, ids)
        q = _unit(rng.standard_normal(dim)).astype(np.float32)
        k = int(rng.integers(1, 20))
        mismatches += top_k(index, q, k) != full_sort_topk(index.matrix, index.ids, q, k)
    index = Index.from_vectors(_unit(rng.standard_normal((1000, 64))).astype(np.float32),
                               [f"t{i}" for i in range(1000)])
    queries = _unit(rng.standard_normal((257, 64))).astype(np.float32)
    reference = batch_search(index, queries, 10, block_size=257).rankings
    variant = [b for b in (1, 2, 5, 32, 100, 256) if batch_search(index, queries, 10, block_size=b).rankings != reference]
    took = time.perf_counter() - start
    record(capsys, 3, mismatches == 0 and not variant and took < 60,
           f"{mismatches}/100 oracle mismatches, block sizes differing: {variant or 'none'}, {took:.1f}s")


# 4 ---------------------------------------------------------------------------------

def test_criterion_4_curation(capsys):
    start = time.perf_counter()
    failures = []
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = GenConfig(n_queries=int(rng.integers(30, 150)), titles_per_query=int(rng.integers(2, 10)),
                        frac_common_str=1.0, frac_alphanum=0.0, rng_seed=seed)
        pairs = generate(cfg)
        ccfg = CurationConfig(rng_seed=seed, dev_fraction=float(rng.uniform(0.5, 0.9)))
        cq = build_cq(filter_pairs(pairs, ccfg), ccfg)
        common = build_cq_common_str(cq)
        if len(common.dev_queries) + len(common.test_queries) != cfg.n_queries:
            failures.append(f"seed {seed}: common-str dropped queries")
        if set(cq.dev_queries) & set(cq.test_queries):
            failures.append(f"seed {seed}: dev/test overlap")
        balanced = build_cq_balanced(cq, rng_seed=seed)
        rels = [r for judged in balanced.qrels.values() for r, _ in judged.values()]
        ratio = sum(r > 3 for r in rels) / sum(r < 3 for r in rels)
        ratios.append(ratio)
        if not 0.9 <= ratio <= 1.1:
            failures.append(f"seed {seed}: balanced ratio {ratio:.3f}")
        if build_cq(filter_pairs(generate(cfg), ccfg), ccfg) != cq or build_cq_balanced(cq, rng_seed=seed) != balanced:
            failures.append(f"seed {seed}: not deterministic")
    took = time.perf_counter() - start
    record(capsys, 4, not failures and took < 60,
           f"20 configs, balanced ratio range [{min(ratios):.3f}, {max(ratios):.3f}], "
           f"{'; '.join(failures) or 'all invariants hold'}, {took:.1f}s")


# 5 ---------------------------------------------------------------------------------

def test_criterion_5_correlations(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(3, 300))
        if i % 2:
            x, y = rng.integers(1, 6, n).astype(float), rng.integers(0, 2, n).astype(float)
        else:
            x = rng.standard_normal(n)
            y = x + rng.standard_normal(n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            x[0], y[0] = x[0] + 1, y[0] + 1
        worst = max(worst,
                    abs(pearson(x, y) - stats.pearsonr(x, y)[0]),
                    abs(spearman(x, y) - stats.spearmanr(x, y)[0]),
                    abs(kendall_tau_b(x, y) - stats.kendalltau(x, y, variant="b")[0]))
    exact = [correlation_stats(generate(GenConfig(n_queries=200, rng_seed=s))) for s in range(3)]
    all_one = all(v == 1.0 for triple in exact for v in triple)
    record(capsys, 5, worst < 1e-9 and all_one,
           f"max deviation from scipy {worst:.1e} on 100 series, noise-free generator stats {exact[0]}")


# 6 and 7 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ablations():
    """Test-set reports per seed for baseline and the three losses at default settings."""
    out = {}
    for seed in SEEDS:
        bench = make_benchmark(seed, n_queries=1000, titles_per_query=6, frac_common_str=0.5, frac_alphanum=0.3)
        model = init_model(64, seed=child_seed(seed, "encoder"))
        cfg = TrainConfig(rng_seed=child_seed(seed, "trainer"))
        start = time.perf_counter()
        reports = cli.run_ablation(model, bench.train_pairs, bench.split, cfg)
        out[seed] = (reports, time.perf_counter() - start)
    return out


def test_criterion_6_uco_gain(ablations, capsys):
    gains = [r["MNRL+OCL"]["NDCG@10"] - r["baseline"]["NDCG@10"] for r, _ in ablations.values()]
    # one of three trainings per seed; the per-seed time covers all three
    slowest = max(t for _, t in ablations.values()) / 3
    median = float(np.median(gains))
    record(capsys, 6, median >= 0.20 and slowest < 600,
           f"median test NDCG@10 gain {median:+.4f} (per seed {', '.join(f'{g:+.4f}' for g in gains)}), "
           f"about {slowest:.0f}s per training")


def test_criterion_7_loss_ordering(ablations, capsys):
    med = {loss: {m: float(np.median([r[loss][m] for r, _ in ablations.values()])) for m in ("NDCG@5", "MRR@10")}
           for loss in ("MNRL+OCL", "MNRL", "OCL")}
    ok = all(med["MNRL+OCL"][m] >= med["MNRL"][m] >= med["OCL"][m] for m in ("NDCG@5", "MRR@10"))
    slowest = max(t for _, t in ablations.values())
    detail = "; ".join(f"{loss} {med[loss]['NDCG@5']:.4f}/{med[loss]['MRR@10']:.4f}" for loss in med)
    record(capsys, 7, ok and slowest < 1800,
           f"3-seed median NDCG@5/MRR@10: {detail}; three trainings take {slowest:.0f}s")


# 8 ---------------------------------------------------------------------------------

def _at_distance(q, d, rng):
    r = rng.standard_normal(len(q))
    r -= (r @ q) * q
    r /= np.linalg.norm(r)
    c = 1.0 - d
    return c * q + np.sqrt(max(0.0, 1.0 - c * c)) * r


def test_criterion_8_margin_geometry(capsys):
    rng = np.random.default_rng(8)
    good = 0
    for _ in range(1000):
        margin = float(rng.uniform(0.05, 1.0))
        dim = int(rng.integers(4, 65))
        radius = float(rng.uniform(0.0, 2.0 - margin - 1e-3))
        queries, positives, negatives = [], [], []
        for _ in range(int(rng.integers(1, 5))):
            q = _unit(rng.standard_normal(dim))
            queries.append(q)
            positives.append([_at_distance(q, d, rng) for d in rng.uniform(0, radius, int(rng.integers(1, 5)))])
            negatives.append([_at_distance(q, d, rng)
                              for d in rng.uniform(radius + margin + 1e-6, 2.0, int(rng.integers(1, 5)))])
        batch = LossBatch.from_lists(np.array(queries), positives, negatives, margin)
        good += mnrl(batch).loss == 0.0 and not ocl(batch).mined.any()
    record(capsys, 8, good == 1000, f"{good}/1000 constructed batches give zero MNRL and no mined OCL pairs")


# 9 ---------------------------------------------------------------------------------

def _pipeline(root):
    steps = [
        ["gen", "--seed", "7", "--queries", "150", "--out", "eval.tsv"],
        ["gen", "--seed", "8", "--queries", "150", "--id-prefix", "tr-", "--out", "train.tsv"],
        ["curate", "--seed", "7", "--pairs", "eval.tsv", "--out", "splits"],
        ["train", "--seed", "7", "--pairs", "train.tsv", "--dev-split", "splits/CQ", "--out", "model.ckpt",
         "--epochs", "3", "--lr", "1e-3"],
        ["eval", "--ckpt", "model.ckpt", "--split", "splits/CQ", "--out", "run.tsv", "--report", "report.tsv"],
    ]
    for argv in steps:
        code = subprocess.run([sys.executable, "-m", "uco.cli", *argv], cwd=root).returncode
        if code != 0:
            raise AssertionError(f"{argv[0]} exited {code}")
    return sorted(root.rglob("*.manifest.json"))


def _artifacts(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith(".manifest.json")}


def test_criterion_9_determinism(tmp_path, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    manifests = _pipeline(first)
    original = _artifacts(first)
    # fresh directory, driven only by the recorded manifests, in pipeline order
    order = {"gen": 0, "curate": 1, "train": 2, "eval": 3}
    replayed = sorted(manifests, key=lambda m: (order[json.loads(m.read_text())["command"]], str(m)))
    for m in replayed:
        argv = json.loads(m.read_text())["argv"]
        code = subprocess.run([sys.executable, "-m", "uco.cli", *argv], cwd=second).returncode
        assert code == 0, argv
    rerun = _artifacts(second)
    in_place = [subprocess.run([sys.executable, "-m", "uco.cli", "replay", "--check", str(m)], cwd=first).returncode
                for m in manifests]
    same = original == rerun and all(c == 0 for c in in_place)
    record(capsys, 9, same,
           f"{len(original)} artifacts from {len(manifests)} manifests, fresh rerun identical: {original == rerun}, "
           f"in-place replays identical: {all(c == 0 for c in in_place)}")


# 10 --------------------------------------------------------------------------------

SCALE_SCRIPT = textwrap.dedent("""
    import json, resource, time
    import numpy as np
    from uco.retrieval import Index, batch_search

    rng = np.random.default_rng(10)
    def unit(n, d):
        x = rng.standard_normal((n, d), dtype=np.float32)
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    corpus = unit(187469, 64)
    queries = unit(17325, 64)
    start = time.perf_counter()
    index = Index.from_vectors(corpus, [f"t{i}" for i in range(len(corpus))])
    run = batch_search(index, queries, 10)
    took = time.perf_counter() - start
    run.validate(len(corpus))
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    print(json.dumps({"seconds": took, "peak_bytes": rss, "queries": len(run.rankings)}))
""")


def test_criterion_10_scale(capsys):
    proc = subprocess.run([sys.executable, "-c", SCALE_SCRIPT], capture_output=True, text=True, timeout=1800)
    assert proc.returncode == 0, proc.stderr
    out = json.loads(proc.stdout.strip().splitlines()[-1])
    ok = out["seconds"] < 900 and out["peak_bytes"] < 4 * 2**30 and out["queries"] == 17325
    record(capsys, 10, ok, f"187,469 x 17,325 at dim 64: {out['seconds']:.1f}s, "
                           f"peak RSS {out['peak_bytes'] / 2**30:.2f} GiB")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
