"""Command-line entry point.

Subcommands:
    run              run trials of one scenario/variant and write an archive
    report           recompute the metric table from an archive
    train-fewshot    train the descriptor embedder and save its parameters
    check-invariants run the built-in property suites
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import checks, fewshot, harness
from .scenario import bundled_scenarios, load_scenario


def _cmd_run(args) -> int:
    spec = load_scenario(args.scenario)
    archive = harness.run_batch([spec], [args.variant], args.trials, args.seed,
                                include_trajectories=not args.no_trajectories)
    if args.out:
        harness.save_archive(archive, args.out)
        print(f"wrote archive: {args.out}")
    reports = harness.metrics_from_archive(archive)
    sys.stdout.write(harness.metrics_to_csv(reports))
    return 0


def _cmd_report(args) -> int:
    archive = harness.load_archive(args.infile)
    reports = harness.metrics_from_archive(archive)
    if args.format == "csv":
        sys.stdout.write(harness.metrics_to_csv(reports))
    else:
        rows = [dict(r.to_row(), n_trials=r.n_trials, collision_rate=r.collision_rate,
                     timeout_rate=r.timeout_rate) for r in reports]
        print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def _cmd_train_fewshot(args) -> int:
    if args.classes != 4:
        print("only the 4-class configuration is supported", file=sys.stderr)
        return 2
    rng = np.random.default_rng(args.seed)
    cfg = fewshot.DescriptorConfig(dim=args.dim)
    xs, ys = fewshot.make_dataset(cfg, args.per_class, rng)
    n = len(xs)
    order = rng.permutation(n)
    split = int(0.8 * n)
    train_idx, test_idx = order[:split], order[split:]
    pairs = fewshot.make_pairs(xs[train_idx], ys[train_idx], args.pairs, rng)
    tp = fewshot.TrainingParams(epochs=args.epochs, seed=args.seed)
    params, curve = fewshot.train(pairs, tp)
    fewshot.save_params(params, args.out)
    curve_path = str(args.out) + ".loss.csv"
    fewshot.write_loss_curve(curve_path, curve)
    refs = fewshot.make_references(xs[train_idx], ys[train_idx], 8, rng)
    acc = fewshot.nearest_reference_accuracy(params, xs[test_idx], ys[test_idx], refs)
    print(f"wrote parameters: {args.out}")
    print(f"wrote loss curve: {curve_path}")
    print(f"final mean loss: {curve[-1]:.6f}  held-out accuracy: {acc:.4f}")
    return 0


def _cmd_check(args) -> int:
    results = checks.run_all(seed=args.seed)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vegnav",
                                     description="vegetation-aware navigation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run trials and write a raw archive")
    p_run.add_argument("--scenario", required=True,
                       help=f"scenario JSON path or bundled name ({', '.join(bundled_scenarios())})")
    p_run.add_argument("--variant", default="vern",
                       choices=["vern", "vern-no-height", "vern-no-recovery", "dwa-baseline"])
    p_run.add_argument("--trials", type=int, default=10)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default=None, help="archive JSON output path")
    p_run.add_argument("--no-trajectories", action="store_true",
                       help="omit pose sequences from the archive")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="recompute metrics from an archive")
    p_rep.add_argument("--in", dest="infile", required=True)
    p_rep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_rep.set_defaults(func=_cmd_report)

    p_tf = sub.add_parser("train-fewshot", help="train the descriptor embedder")
    p_tf.add_argument("--classes", type=int, default=4)
    p_tf.add_argument("--per-class", type=int, default=600)
    p_tf.add_argument("--out", required=True, help="parameter file output path")
    p_tf.add_argument("--dim", type=int, default=16)
    p_tf.add_argument("--pairs", type=int, default=6000)
    p_tf.add_argument("--epochs", type=int, default=30)
    p_tf.add_argument("--seed", type=int, default=0)
    p_tf.set_defaults(func=_cmd_train_fewshot)

    p_chk = sub.add_parser("check-invariants", help="run the built-in property suites")
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.set_defaults(func=_cmd_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
