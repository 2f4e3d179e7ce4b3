"""Command-line entry point: gen, curate, init, train, eval, ablate, report, replay.

Every invocation writes one JSON manifest next to its primary output. The
manifest stores the resolved argument vector, derived seeds, input and
output paths with sha256 hashes, and wall-clock duration, so ``uco replay``
can re-run the command and check that outputs are bit-identical.

Exit codes: 0 success, 1 validation error (bad flags, bad or missing input),
2 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import __version__
from .curation import CurationConfig, build_all_splits, correlation_stats, write_correlations
from .datamodel import EvalSplit, GradedPair, ValidationError, load_pairs, load_run, load_split, save_pairs, save_run, save_split
from .encoder import EmbeddingModel, FeaturizerConfig, init_model, load_model, save_model
from .metrics import MetricConfig, aggregate, format_report, metric_names, write_report
from .seeding import child_seed
from .synthgen import GenConfig, generate
from .trainer import TrainConfig, eval_retrieval, retrieve, train, write_history

log = logging.getLogger("uco")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
ABLATION_METRICS = ("NDCG@5", "MRR@10")
ABLATION_ROWS = (("baseline", None), ("MNRL", "mnrl"), ("OCL", "ocl"), ("MNRL+OCL", "dual"))
DEFAULT_MARGINS = (0.25, 0.5, 0.75)


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; that code is reserved for runtime errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files_under(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file() and not p.name.endswith(".manifest.json"))
    return [path] if path.exists() else []


def hash_paths(paths: Sequence) -> Dict[str, str]:
    out = {}
    for p in paths:
        for f in _files_under(Path(p)):
            out[str(f)] = sha256(f)
    return out


class Invocation:
    """Collects what one command read, wrote and derived, then writes the manifest."""

    def __init__(self, command: str, argv: Sequence[str], args: argparse.Namespace):
        self.command = command
        self.argv = list(argv)
        self.config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
        self.seeds: Dict[str, int] = {}
        self.inputs: List[str] = []
        self.outputs: List[str] = []
        self.start = time.perf_counter()

    def seed(self, root: int, name: str) -> int:
        value = child_seed(root, name)
        self.seeds[name] = value
        return value

    def manifest_path(self) -> Path:
        primary = Path(self.outputs[0])
        if primary.is_dir():
            return primary / f"{self.command}.manifest.json"
        return primary.with_name(primary.name + ".manifest.json")

    def write(self) -> Path:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": hash_paths(self.inputs),
            "outputs": hash_paths(self.outputs),
            "duration_seconds": round(time.perf_counter() - self.start, 3),
        }
        path = self.manifest_path()
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# -- config files ---------------------------------------------------------------

def read_config_file(path) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys are flag names with or without dashes."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def apply_config_defaults(parser: argparse.ArgumentParser, values: Dict[str, str], source) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise ValidationError(f"{source}: unknown key {key!r} for {parser.prog}")
        if isinstance(action, argparse._StoreConstAction):
            flag = _parse_bool(text)
            defaults[key] = action.const if flag else action.default
        elif action.nargs in ("+", "*"):
            defaults[key] = [action.type(t) if action.type else t for t in text.split(",")]
        else:
            defaults[key] = action.type(text) if action.type else text
            if action.choices is not None and defaults[key] not in action.choices:
                raise ValidationError(f"{source}: {key} must be one of {sorted(action.choices)}")
    parser.set_defaults(**defaults)


# -- commands -------------------------------------------------------------------

def cmd_gen(args, inv: Invocation) -> None:
    cfg = GenConfig(n_queries=args.queries, titles_per_query=args.titles, frac_common_str=args.common_str,
                    frac_alphanum=args.alphanum, rng_seed=inv.seed(args.seed, "synthgen"), id_prefix=args.id_prefix)
    pairs = generate(cfg)
    save_pairs(pairs, args.out)
    inv.outputs.append(args.out)
    log.info("wrote %d pairs for %d queries to %s", len(pairs), cfg.n_queries, args.out)


def cmd_curate(args, inv: Invocation) -> None:
    inv.inputs.append(args.pairs)
    pairs = load_pairs(args.pairs)
    cfg = CurationConfig(positive_threshold=args.positive_threshold, negative_threshold=args.negative_threshold,
                         dev_fraction=args.dev_fraction, rng_seed=inv.seed(args.seed, "curation"),
                         english_filter=not args.no_english_filter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inv.outputs.append(str(out))
    for name, split in build_all_splits(pairs, cfg).items():
        save_split(split, out / name)
        log.info("%s: %d dev, %d test queries, %d titles", name, len(split.dev_queries),
                 len(split.test_queries), len(split.corpus))
    stats = correlation_stats(pairs)
    write_correlations(stats, out / "correlations.txt")
    log.info("pearson %.4f kendall %.4f spearman %.4f", *stats)


def _featurizer(args) -> FeaturizerConfig:
    return FeaturizerConfig(n_buckets=args.buckets, hash_seed=args.hash_seed)


def cmd_init(args, inv: Invocation) -> None:
    model = init_model(args.dim, _featurizer(args), seed=inv.seed(args.seed, "encoder"))
    save_model(model, args.out)
    inv.outputs.append(args.out)


def _train_config(args, inv: Invocation, **overrides) -> TrainConfig:
    kwargs = dict(batch_size=args.batch, learning_rate=args.lr, weight_decay=args.wd, max_epochs=args.epochs,
                  margin=args.margin, rng_seed=inv.seed(args.seed, "trainer"),
                  in_batch_negatives=not args.no_in_batch_negatives, loss=args.loss)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def _start_model(args, inv: Invocation) -> EmbeddingModel:
    if args.init:
        inv.inputs.append(args.init)
        return load_model(args.init)
    return init_model(args.dim, _featurizer(args), seed=inv.seed(args.seed, "encoder"))


def cmd_train(args, inv: Invocation) -> None:
    inv.inputs += [args.pairs, args.dev_split]
    pairs = load_pairs(args.pairs)
    split = load_split(args.dev_split)
    model = _start_model(args, inv)
    best, history = train(model, pairs, split, _train_config(args, inv))
    save_model(best, args.out)
    history_path = args.history or str(Path(args.out).with_name("history.tsv"))
    write_history(history, history_path)
    inv.outputs += [args.out, history_path]
    log.info("best epoch %d of %d", history.best_epoch, len(history.epochs))


def cmd_eval(args, inv: Invocation) -> None:
    inv.inputs += [args.ckpt, args.split]
    model = load_model(args.ckpt)
    split = load_split(args.split)
    run = retrieve(model, split, args.queries, k=args.k)
    save_run(run, args.out)
    inv.outputs.append(args.out)
    if args.report:
        write_report([(args.label or split.name, aggregate(run, split.qrels))], args.report)
        inv.outputs.append(args.report)


def run_ablation(model: EmbeddingModel, train_pairs: Sequence[GradedPair], split: EvalSplit,
                 cfg: TrainConfig) -> Dict[str, Dict[str, float]]:
    """Test-set reports for the untrained model and one training per loss, all from the same start."""
    reports = {}
    for label, loss in ABLATION_ROWS:
        trained = model if loss is None else train(model, train_pairs, split, _replace(cfg, loss=loss))[0]
        reports[label] = eval_retrieval(trained, split, "test")
        log.info("%s: %s", label, "  ".join(f"{m} {reports[label][m]:.4f}" for m in ABLATION_METRICS))
    return reports


def sweep_margin(model: EmbeddingModel, train_pairs, split: EvalSplit, cfg: TrainConfig,
                 margins: Sequence[float] = DEFAULT_MARGINS) -> Tuple[float, List[Tuple[float, float]]]:
    """Best margin by dev NDCG@10 of the dual-loss model; ties go to the smaller margin."""
    scores = []
    for m in margins:
        trained, _ = train(model, train_pairs, split, _replace(cfg, loss="dual", margin=m))
        scores.append((m, eval_retrieval(trained, split, "dev")["NDCG@10"]))
    best = max(scores, key=lambda s: (s[1], -s[0]))[0]
    return best, scores


def _replace(cfg: TrainConfig, **changes) -> TrainConfig:
    from dataclasses import replace

    return replace(cfg, **changes)


def write_ablation(reports: Dict[str, Dict[str, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(("loss",) + ABLATION_METRICS) + "\n")
        for label, _ in ABLATION_ROWS:
            fh.write("\t".join([label] + [f"{reports[label][m]:.4f}" for m in ABLATION_METRICS]) + "\n")


def cmd_ablate(args, inv: Invocation) -> None:
    inv.inputs += [args.pairs, args.split]
    pairs = load_pairs(args.pairs)
    split = load_split(args.split)
    if not split.dev_queries or not split.test_queries:
        raise ValidationError(f"{args.split}: ablation needs both dev and test queries")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inv.outputs.append(str(out))
    model = _start_model(args, inv)
    cfg = _train_config(args, inv)
    if args.margin_sweep:
        best, scores = sweep_margin(model, pairs, split, cfg, args.margin_sweep)
        with open(out / "margin_sweep.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("margin\tdev_NDCG@10\n")
            fh.writelines(f"{m}\t{s:.4f}\n" for m, s in scores)
        log.info("margin sweep picked %s", best)
        cfg = _replace(cfg, margin=best)
    reports = run_ablation(model, pairs, split, cfg)
    write_ablation(reports, out / "ablation.tsv")
    write_report([(label, reports[label]) for label, _ in ABLATION_ROWS], out / "report.tsv")


def report_rows(entries: Sequence[Tuple[str, dict, dict | None]]) -> List[Tuple[str, Dict[str, float]]]:
    """Rows per split: baseline, then UCO and the difference when a UCO run is present."""
    rows = []
    for name, base, uco in entries:
        rows.append((f"{name} UCO-", base))
        if uco is not None:
            rows.append((f"{name} UCO+", uco))
            rows.append((f"{name} delta", {k: uco[k] - base[k] for k in metric_names()}))
    return rows


def format_table(rows) -> str:
    names = metric_names()
    cells = [["run"] + names] + [[label] + list(format_report(r).values()) for label, r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    return "\n".join("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths)))
                     for row in cells)


def cmd_report(args, inv: Invocation) -> None:
    uco = args.uco or []
    if len(args.split) != len(args.baseline):
        raise ValidationError("give one --baseline run per --split")
    if uco and len(uco) != len(args.split):
        raise ValidationError("give one --uco run per --split, or none")
    entries = []
    for i, split_dir in enumerate(args.split):
        split = load_split(split_dir)
        inv.inputs += [split_dir, args.baseline[i]] + ([uco[i]] if uco else [])
        base = aggregate(load_run(args.baseline[i]), split.qrels)
        after = aggregate(load_run(uco[i]), split.qrels) if uco else None
        entries.append((split.name, base, after))
    rows = report_rows(entries)
    write_report(rows, args.out)
    text = format_table(rows)
    for path in args.history or []:
        inv.inputs.append(path)
        text += "\n\n" + _history_summary(path)
    txt_path = str(Path(args.out).with_suffix(".txt"))
    Path(txt_path).write_text(text + "\n", encoding="utf-8")
    inv.outputs += [args.out, txt_path]
    print(text)


def _history_summary(path) -> str:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ValidationError(f"{path}: empty history")
    header = lines[0].split("\t")
    try:
        rows = [dict(zip(header, map(float, line.split("\t")))) for line in lines[1:]]
        best = max(rows, key=lambda r: r["NDCG@10"])
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"{path}: malformed history ({exc})") from exc
    return (f"{path}: best epoch {int(best['epoch'])} of {len(rows)}, dev NDCG@10 {best['NDCG@10']:.4f}, "
            f"acc {best['acc']:.4f}, f1 {best['f1']:.4f}")


def cmd_replay(args, inv: Invocation | None) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("command") == "replay":
        raise ValidationError("cannot replay a replay")
    code = main(manifest["argv"])
    if code != EXIT_OK or not args.check:
        return code
    now = hash_paths(manifest["outputs"].keys())
    mismatched = sorted(p for p, digest in manifest["outputs"].items() if now.get(p) != digest)
    for p in mismatched:
        print(f"differs: {p}", file=sys.stderr)
    if mismatched:
        return EXIT_RUNTIME
    print(f"replayed {manifest['command']}: {len(now)} outputs identical")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_model_flags(p) -> None:
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--buckets", type=int, default=2**18, help="hash buckets for n-gram features")
    p.add_argument("--hash-seed", type=int, default=0)


def _add_train_flags(p) -> None:
    p.add_argument("--init", help="start from this checkpoint instead of a fresh table")
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--loss", choices=("mnrl", "ocl", "dual"), default="dual")
    p.add_argument("--no-in-batch-negatives", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uco", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"uco {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file; explicit flags win")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("gen", cmd_gen, "generate a synthetic graded pairs file")
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--titles", type=int, default=6)
    p.add_argument("--common-str", type=float, default=0.5)
    p.add_argument("--alphanum", type=float, default=0.3)
    p.add_argument("--id-prefix", default="")
    p.add_argument("--out", required=True)

    p = command("curate", cmd_curate, "build CQ splits and correlation stats from pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="directory receiving one folder per split")
    p.add_argument("--dev-fraction", type=float, default=0.8)
    p.add_argument("--positive-threshold", type=int, default=3)
    p.add_argument("--negative-threshold", type=int, default=3)
    p.add_argument("--no-english-filter", action="store_true")

    p = command("init", cmd_init, "write an untrained checkpoint")
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "fine-tune an encoder on centrality labels")
    p.add_argument("--pairs", required=True)
    p.add_argument("--dev-split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="defaults to history.tsv next to --out")
    _add_train_flags(p)

    p = command("eval", cmd_eval, "retrieve with a checkpoint and write a run file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--queries", choices=("dev", "test"), default="test")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="also write a metrics report here")
    p.add_argument("--label")

    p = command("ablate", cmd_ablate, "baseline plus one training per loss")
    p.add_argument("--pairs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--margin-sweep", type=float, nargs="*", metavar="M",
                   help=f"pick the margin on dev first (bare flag: {' '.join(map(str, DEFAULT_MARGINS))})")
    _add_train_flags(p)

    p = command("report", cmd_report, "metric tables with before/after differences")
    p.add_argument("--split", action="append", required=True)
    p.add_argument("--baseline", action="append", required=True)
    p.add_argument("--uco", action="append")
    p.add_argument("--history", action="append")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--check", action="store_true", help="fail unless outputs match the recorded hashes")
    p.set_defaults(func=cmd_replay, config=None)
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        apply_config_defaults(subparser, read_config_file(args.config), args.config)
        args = parser.parse_args(argv)
    if getattr(args, "margin_sweep", None) == []:
        args.margin_sweep = list(DEFAULT_MARGINS)
    return args


def _resolved_argv(args: argparse.Namespace) -> List[str]:
    """Explicit argument vector reproducing ``args`` without the config file."""
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[args.command]
    argv = [args.command]
    for action in sub._actions:
        if not action.option_strings or action.dest in ("help", "config"):
            continue
        value = getattr(args, action.dest)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreConstAction):
            if value == action.const:
                argv.append(flag)
        elif value is None:
            continue
        elif isinstance(action, argparse._AppendAction):
            for v in value:
                argv += [flag, str(v)]
        elif isinstance(value, list):
            argv += [flag] + [repr(v) for v in value]
        else:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    return argv


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"uco: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args, None)
        inv = Invocation(args.command, _resolved_argv(args), args)
        args.func(args, inv)
        inv.write()
    except (ValidationError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"uco {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error by contract
        log.debug("runtime failure", exc_info=True)
        print(f"uco {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
