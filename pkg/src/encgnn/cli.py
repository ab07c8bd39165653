"""Command-line surface: training runs, ablation studies, synthetic data
generation and result reporting.

Exit codes: 0 success, 1 configuration error, 2 numeric failure (divergence).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .data import (
    FULLY_SUPERVISED_SEEDS,
    DataError,
    fully_supervised_split,
    generate_sbm,
    load_canonical,
    write_canonical,
)
from .presets import get_preset, preset_names
from .train import (
    DivergenceError,
    Hyperparams,
    run_repeated,
    write_run_config,
    write_summary_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

ABLATION_STUDIES = ("loss-influence", "fixed-vs-random", "tv-vs-preg", "depth-sweep")


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Argument parser honoring the exit-code contract (usage errors are
    configuration errors, exit 1; code 2 is reserved for numeric failures)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def resolve_data_dir(path: str) -> str:
    """Resolve a dataset directory, falling back to $ENC_DATA_DIR for
    relative names."""
    if os.path.isdir(path):
        return path
    root = os.environ.get("ENC_DATA_DIR")
    if root and not os.path.isabs(path):
        candidate = os.path.join(root, path)
        if os.path.isdir(candidate):
            return candidate
    raise CliError(f"dataset directory not found: {path}")


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise CliError(f"bad --seeds value: {text!r}") from None


def build_hyperparams(args) -> Hyperparams:
    hp = get_preset(args.preset) if args.preset else Hyperparams()
    overrides = {}
    for flag, field_name in [
        ("backbone", "backbone"), ("layers", "layers"), ("channels", "channels"),
        ("dropout", "dropout"), ("alpha", "alpha"), ("beta", "beta"),
        ("gamma", "gamma"), ("lam", "lam"), ("sigma", "sigma"),
        ("lr_gnn", "lr_gnn"), ("lr_oc", "lr_oc"), ("wd_gnn", "wd_gnn"),
        ("wd_oc", "wd_oc"), ("max_epochs", "max_epochs"), ("patience", "patience"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    try:
        return replace(hp, **overrides)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", choices=["gcn", "gat", "gcnii"], default=None,
                   help="GNN layer family (default gcn)")
    p.add_argument("--layers", type=int, default=None, help="GNN layer count (default 2)")
    p.add_argument("--channels", type=int, default=None, help="hidden channels (default 64)")
    p.add_argument("--dropout", type=float, default=None, help="dropout probability (default 0.5)")
    p.add_argument("--alpha", type=float, default=None, help="mutual-information weight (default 0)")
    p.add_argument("--beta", type=float, default=None, help="total-variation weight (default 0)")
    p.add_argument("--gamma", type=float, default=None, help="gradient-consistency weight (default 0)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="class-balance weight inside the MI loss (default 2)")
    p.add_argument("--sigma", type=float, default=None, help="TV edge bandwidth (default 10)")
    p.add_argument("--lr-gnn", dest="lr_gnn", type=float, default=None,
                   help="learning rate of the GNN layers (default 0.01)")
    p.add_argument("--lr-oc", dest="lr_oc", type=float, default=None,
                   help="learning rate of the opening/closing layers (default 0.01)")
    p.add_argument("--wd-gnn", dest="wd_gnn", type=float, default=None,
                   help="weight decay of the GNN layers (default 0)")
    p.add_argument("--wd-oc", dest="wd_oc", type=float, default=None,
                   help="weight decay of the opening/closing layers (default 0)")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None,
                   help="epoch budget (default 1500)")
    p.add_argument("--patience", type=int, default=None,
                   help="early-stop patience on validation accuracy (default 100)")
    p.add_argument("--preset", default=None,
                   help="named hyperparameter preset, e.g. enc-gcn-cora")
    p.add_argument("--seeds", default="0", help="comma-separated seed list (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers (default 1)")
    p.add_argument("--out", default=None, help="output directory for CSV artifacts")


def _load(args):
    data_dir = resolve_data_dir(args.data)
    notes = []
    ds = load_canonical(data_dir, log=notes.append)
    for msg in notes:
        print(f"note: {msg}", file=sys.stderr)
    if args.split in ds.splits:
        return ds, ds.splits[args.split]
    # full-<i>: stratified 48/32/20 split from the shipped seed list, used
    # when no converted fixed-split files exist
    if args.split.startswith("full-"):
        try:
            ordinal = int(args.split.split("-", 1)[1])
            seed = FULLY_SUPERVISED_SEEDS[ordinal]
        except (ValueError, IndexError):
            raise CliError(
                f"bad split {args.split!r}; full-<i> takes i in "
                f"[0, {len(FULLY_SUPERVISED_SEEDS)})") from None
        return ds, fully_supervised_split(ds.y, seed)
    raise CliError(f"split {args.split!r} not in dataset "
                   f"(available: {', '.join(sorted(ds.splits))}, full-<i>)")


def cmd_train(args) -> int:
    ds, split = _load(args)
    hp = build_hyperparams(args)
    seeds = parse_seeds(args.seeds)
    t0 = time.perf_counter()
    agg = run_repeated(ds, split, hp, seeds, jobs=args.jobs, out_dir=args.out)
    runtime = time.perf_counter() - t0
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_run_config(os.path.join(args.out, "run-config.txt"), hp,
                         extra={"dataset": ds.name, "split": args.split,
                                "seeds": ",".join(map(str, seeds))})
        label = f"{ds.name}-{hp.backbone}-L{hp.layers}"
        write_summary_csv(
            os.path.join(args.out, "summary.csv"),
            [(label, s, r.best_val_acc, r.test_acc_at_best_val, runtime / len(seeds))
             for s, r in agg.per_seed])
    print(f"{ds.name} {hp.backbone} {hp.layers} "
          f"test_acc={agg.mean:.4f} ±{agg.std:.4f}")
    return EXIT_OK


def _ablate_rows_loss_influence(ds, hp, seeds):
    from .data import per_class_split
    variants = {
        "ce": replace(hp, alpha=0.0, beta=0.0, gamma=0.0),
        "mi": replace(hp, beta=0.0, gamma=0.0),
        "tv": replace(hp, alpha=0.0, gamma=0.0),
        "cvg": replace(hp, alpha=0.0, beta=0.0),
        "all": hp,
    }
    rows = []
    for per_class in range(10, 101, 10):
        for seed in seeds:
            split = per_class_split(ds.y, per_class=per_class,
                                    n_val=min(500, ds.n // 4),
                                    n_test=min(1000, ds.n // 4),
                                    rng=np.random.default_rng(9000 + seed))
            for name, var_hp in variants.items():
                agg = run_repeated(ds, split, var_hp, [seed])
                rows.append([per_class, name, seed, agg.mean])
    return ["labels_per_class", "variant", "seed", "test_acc"], rows


def _ablate_rows_fixed_vs_random(ds, hp, seeds, split):
    if hp.gamma == 0:
        hp = replace(hp, gamma=1.0)
    rows = []
    for seed in seeds:
        agg = run_repeated(ds, split, replace(hp, partition_policy="random"), [seed])
        rows.append(["random", seed, agg.mean])
    for init in range(10):
        agg = run_repeated(ds, split, replace(hp, partition_policy="fixed"), [init])
        rows.append(["fixed", init, agg.mean])
    return ["policy", "seed", "test_acc"], rows


def _ablate_rows_tv_vs_preg(ds, hp, seeds, split):
    beta = hp.beta if hp.beta > 0 else 1.0
    variants = {
        "gcn": replace(hp, alpha=0.0, beta=0.0, gamma=0.0),
        "tv-basic": replace(hp, alpha=0.0, gamma=0.0, beta=beta, regularizer="tv_basic"),
        "tv-ours": replace(hp, alpha=0.0, gamma=0.0, beta=beta, regularizer="tv"),
        "preg": replace(hp, alpha=0.0, gamma=0.0, beta=beta, regularizer="preg"),
    }
    rows = []
    for name, var_hp in variants.items():
        for seed in seeds:
            agg = run_repeated(ds, split, var_hp, [seed])
            rows.append([name, seed, agg.mean])
    return ["variant", "seed", "test_acc"], rows


def _ablate_rows_depth_sweep(ds, hp, seeds, split):
    baseline = replace(hp, alpha=0.0, beta=0.0, gamma=0.0)
    rows = []
    for depth in (2, 4, 8, 16, 32, 64):
        for name, var_hp in (("baseline", baseline), ("enc", hp)):
            agg = run_repeated(ds, split, replace(var_hp, layers=depth), seeds)
            rows.append([depth, name, agg.mean, agg.std])
    return ["layers", "variant", "mean_test_acc", "std_test_acc"], rows


def cmd_ablate(args) -> int:
    if args.study not in ABLATION_STUDIES:
        raise CliError(f"unknown study {args.study!r}; choose from {ABLATION_STUDIES}")
    ds, split = _load(args)
    hp = build_hyperparams(args)
    seeds = parse_seeds(args.seeds)

    if args.study == "loss-influence":
        header, rows = _ablate_rows_loss_influence(ds, hp, seeds)
    elif args.study == "fixed-vs-random":
        header, rows = _ablate_rows_fixed_vs_random(ds, hp, seeds, split)
    elif args.study == "tv-vs-preg":
        header, rows = _ablate_rows_tv_vs_preg(ds, hp, seeds, split)
    else:
        header, rows = _ablate_rows_depth_sweep(ds, hp, seeds, split)

    out_path = args.out or f"ablate-{args.study}.csv"
    if os.path.dirname(out_path):
        os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {out_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_gen_sbm(args) -> int:
    ds = generate_sbm(args.n, args.k, args.p_in, args.p_out, args.feature_dim,
                      args.signal, args.seed, name=args.name)
    write_canonical(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} k={ds.num_classes} "
          f"edges={ds.graph.num_edges} homophily={ds.homophily():.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for root, _, files in os.walk(args.runs):
        for fname in files:
            if fname == "summary.csv" or (fname.startswith("summary") and fname.endswith(".csv")):
                with open(os.path.join(root, fname), newline="", encoding="utf-8") as fh:
                    reader = csv.DictReader(fh)
                    rows.extend(reader)
    groups: dict[str, list[float]] = {}
    for row in rows:
        groups.setdefault(row["config"], []).append(float(row["test"]))

    lines = ["| config | seeds | test acc |", "| --- | --- | --- |"]
    for config in sorted(groups):
        vals = np.asarray(groups[config])
        lines.append(f"| {config} | {vals.size} | "
                     f"{vals.mean() * 100:.2f} ± {vals.std() * 100:.2f} |")
    table = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_preset(args) -> int:
    if args.name == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    try:
        hp = get_preset(args.name)
    except KeyError as exc:
        raise CliError(str(exc)) from None
    for key, val in hp.as_dict().items():
        print(f"{key}={val}")
    return EXIT_OK


def make_parser() -> Parser:
    parser = Parser(
        prog="encgnn",
        description="Train graph node classifiers with information, smoothness "
                    "and gradient-consistency objectives.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration over seeds")
    p_train.add_argument("--data", required=True,
                         help="canonical dataset directory (resolved against $ENC_DATA_DIR)")
    p_train.add_argument("--split", default="default",
                         help="split name; 'full-<i>' generates the i-th shipped "
                              "48/32/20 split (default 'default')")
    add_hyper_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run a predefined ablation study")
    p_ablate.add_argument("--study", required=True, choices=ABLATION_STUDIES)
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--split", default="default")
    add_hyper_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sbm = sub.add_parser("gen-sbm", help="generate a synthetic block-model dataset")
    p_sbm.add_argument("--out", required=True)
    p_sbm.add_argument("--n", type=int, default=300)
    p_sbm.add_argument("--k", type=int, default=3)
    p_sbm.add_argument("--p-in", dest="p_in", type=float, default=0.1)
    p_sbm.add_argument("--p-out", dest="p_out", type=float, default=0.02)
    p_sbm.add_argument("--feature-dim", dest="feature_dim", type=int, default=16)
    p_sbm.add_argument("--signal", type=float, default=2.0)
    p_sbm.add_argument("--seed", type=int, default=0)
    p_sbm.add_argument("--name", default=None)
    p_sbm.set_defaults(func=cmd_gen_sbm)

    p_report = sub.add_parser("report", help="aggregate summary CSVs into a markdown table")
    p_report.add_argument("--runs", required=True, help="directory tree holding summary CSVs")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=cmd_report)

    p_preset = sub.add_parser("preset", help="print a preset row ('list' to enumerate)")
    p_preset.add_argument("name")
    p_preset.set_defaults(func=cmd_preset)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
