"""Train on synthetic product-search data and compare against the untrained encoder.

Takes a minute or two: 300 queries, three trainings of ten epochs.
"""
import logging

from uco.cli import format_table, report_rows, run_ablation
from uco.encoder import init_model
from uco.seeding import child_seed
from uco.synthgen import make_benchmark
from uco.trainer import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")

seed = 0
bench = make_benchmark(seed, n_queries=300)
split = bench.split
print(len(bench.train_pairs), "training pairs;", len(split.dev_queries), "dev and",
      len(split.test_queries), "test queries over", len(split.corpus), "titles")

# a look at one evaluation query and its judged titles
qid, text = split.test_queries[0]
print(text)
for tid, (rel, cen) in sorted(split.qrels[qid].items()):
    print("  ", rel, cen, dict(split.corpus)[tid])

model = init_model(64, seed=child_seed(seed, "encoder"))
reports = run_ablation(model, bench.train_pairs, split, TrainConfig(rng_seed=child_seed(seed, "trainer")))

print()
print(format_table(report_rows([("CQ", reports["baseline"], reports["MNRL+OCL"])])))
print()
for label in ("MNRL", "OCL", "MNRL+OCL"):
    print(f"{label:>9}  NDCG@5 {reports[label]['NDCG@5']:.4f}  MRR@10 {reports[label]['MRR@10']:.4f}")
