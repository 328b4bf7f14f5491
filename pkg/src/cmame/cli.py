"""Command-line entry point: ``qd run``, ``qd suite`` and ``qd bates``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from cmame.benchmarks import bates_narrowing_report
from cmame.harness import (
    ALGORITHMS,
    ConfigError,
    ExperimentConfig,
    TrialError,
    format_table,
    load_suite,
    run_suite,
    run_trial,
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qd", description="Quality-diversity benchmark runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one trial")
    run.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    run.add_argument("--function", default="sphere", choices=("sphere", "rastrigin"))
    run.add_argument("--dim", type=int, default=20)
    run.add_argument("--evals", type=int, default=100_000)
    run.add_argument("--resolution", type=int, default=100)
    run.add_argument("--sigma0", type=float, default=0.5)
    run.add_argument("--emitters", type=int, default=15)
    run.add_argument("--lambda", dest="lam", type=int, default=None,
                     help="population size (default 500 for cmaes, 37 for emitters)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--snapshot-interval", type=int, default=1000)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--wall-time", action="store_true",
                     help="record wall-clock time (outputs stop being byte-reproducible)")
    run.add_argument("--out", required=True)

    suite = sub.add_parser("suite", help="run a suite file and tabulate results")
    suite.add_argument("--config", required=True)
    suite.add_argument("--out", required=True)

    bates = sub.add_parser("bates", help="behavior-space narrowing under uniform sampling")
    bates.add_argument("--dims", default="20,100")
    bates.add_argument("--samples", type=int, default=100_000)
    bates.add_argument("--resolution", type=int, default=500)
    bates.add_argument("--seed", type=int, default=0)
    bates.add_argument("--out", required=True)
    return parser


def _run(args) -> int:
    config = ExperimentConfig(
        algorithm=args.algorithm, function=args.function, dim=args.dim,
        evaluations=args.evals, resolution=args.resolution, sigma0=args.sigma0,
        emitter_count=args.emitters, lam=args.lam, seed=args.seed,
        snapshot_interval=args.snapshot_interval, workers=args.workers,
        record_wall_time=args.wall_time, output_dir=args.out,
    )
    summary = run_trial(config).summary
    print(f"{config.label} seed {config.seed}: max fitness {summary['max_fitness']:.4f}, "
          f"coverage {100 * summary['coverage']:.2f} %, QD-score {summary['qd_score']:,.1f}")
    return 0


def _suite(args) -> int:
    rows = run_suite(load_suite(args.config), args.out)
    print(format_table(rows), end="")
    return 1 if any(r["errors"] for r in rows) else 0


def _bates(args) -> int:
    dims = [int(d) for d in args.dims.split(",") if d.strip()]
    report = bates_narrowing_report(dims, args.samples, args.resolution,
                                    np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bates.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["dim", "samples", "resolution", "coverage"])
        for n, cov in report.items():
            writer.writerow([n, args.samples, args.resolution, repr(cov)])
            print(f"n={n}: {100 * cov:.3f} % of cells hit")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "suite": _suite, "bates": _bates}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        parser.exit(2, f"qd: error: {exc}\n")
    except TrialError as exc:
        where = f" (checkpoint: {exc.checkpoint_dir})" if exc.checkpoint_dir else ""
        print(f"qd: trial failed{where}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
