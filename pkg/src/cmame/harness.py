"""Experiment configuration, trial orchestration and result files."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from cmame.archive import GridArchive
from cmame.baselines import CmaEsBaseline, CmaEsConfig, MapElites, MapElitesConfig
from cmame.benchmarks import FUNCTIONS, ToyDomain
from cmame.emitters import CmaMeConfig, Scheduler, make_emitters
from cmame.evaluation import EvaluatedBatch
from cmame.metrics import MetricsSnapshot, RunProgress, drive

log = logging.getLogger(__name__)

ALGORITHMS = ("cmaes", "mapelites", "meline", "cmame-opt", "cmame-rd", "cmame-imp")
EMITTER_KIND = {
    "cmame-opt": "optimizing",
    "cmame-rd": "random_direction",
    "cmame-imp": "improvement",
}
METRICS_HEADER = ["evaluations", "qd_score", "coverage", "max_fitness", "max_raw_fitness",
                  "wall_time_s"]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names every bad field."""


class TrialError(RuntimeError):
    """A trial failed mid-run; a checkpoint was written to ``checkpoint_dir``."""

    def __init__(self, message: str, checkpoint_dir: Path | None = None):
        super().__init__(message)
        self.checkpoint_dir = checkpoint_dir


@dataclass
class ExperimentConfig:
    """One trial (or ``trials`` seeds starting at ``seed``) of one algorithm.

    ``lam`` defaults to 500 for ``cmaes`` and 37 for the emitters when left
    as None. ``sigma0`` is the mutation power of MAP-Elites / ME-(line) and
    the initial step size of CMA-ES / CMA-ME.
    """

    algorithm: str = "cmame-imp"
    function: str = "sphere"
    dim: int = 20
    evaluations: int = 100_000
    resolution: int = 100
    sigma0: float = 0.5
    emitter_count: int = 15
    lam: int | None = None
    seed: int = 0
    snapshot_interval: int = 1000
    output_dir: str | None = None
    trials: int = 1
    workers: int = 1
    line_sigma: float = 0.2
    initial_population: int = 100
    batch_size: int = 100
    patience: int = 50
    record_wall_time: bool = False

    def __post_init__(self):
        if self.lam is None:
            self.lam = 500 if self.algorithm == "cmaes" else 37
        errors = []
        if self.algorithm not in ALGORITHMS:
            errors.append(f"algorithm: {self.algorithm!r} not one of {', '.join(ALGORITHMS)}")
        if self.function not in FUNCTIONS:
            errors.append(f"function: {self.function!r} not one of {', '.join(FUNCTIONS)}")
        for name, minimum in [("dim", 2), ("evaluations", 0), ("resolution", 1),
                              ("emitter_count", 1), ("lam", 2), ("snapshot_interval", 1),
                              ("trials", 1), ("workers", 1), ("initial_population", 1),
                              ("batch_size", 1), ("patience", 0)]:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
                errors.append(f"{name}: expected an integer >= {minimum}, got {value!r}")
        for name in ("sigma0", "line_sigma"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                errors.append(f"{name}: expected a finite number >= 0, got {value!r}")
        if isinstance(self.sigma0, (int, float)) and self.sigma0 == 0 and (
            self.algorithm == "cmaes" or self.algorithm.startswith("cmame")
        ):
            errors.append("sigma0: must be > 0 for CMA-based algorithms")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            errors.append(f"seed: expected a non-negative integer, got {self.seed!r}")
        if errors:
            raise ConfigError("invalid experiment config:\n  " + "\n  ".join(errors))

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"invalid experiment config:\n  unknown field(s): {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def label(self) -> str:
        return f"{self.algorithm}_{self.function}_n{self.dim}"


def evaluate_batch(points: np.ndarray, domain: ToyDomain, executor: Executor | None = None,
                   chunks: int = 1) -> EvaluatedBatch:
    """Evaluate ``points`` and return results in input order.

    With an ``executor`` the batch is split into ``chunks`` contiguous pieces
    evaluated concurrently; ``Executor.map`` preserves order, and each point's
    result depends on that point alone, so the output equals the sequential one.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if executor is None or chunks <= 1 or len(points) < 2:
        return domain(points)
    pieces = [p for p in np.array_split(points, min(chunks, len(points))) if len(p)]
    return EvaluatedBatch.concatenate(list(executor.map(domain, pieces)))


class BatchEvaluator:
    """Evaluator callable over a domain, optionally backed by a process pool."""

    def __init__(self, domain: ToyDomain, workers: int = 1):
        self.domain = domain
        self.workers = workers
        self._pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def __call__(self, points: np.ndarray) -> EvaluatedBatch:
        return evaluate_batch(points, self.domain, self._pool, self.workers)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def build_algorithm(config: ExperimentConfig, archive: GridArchive, rng: np.random.Generator):
    if config.algorithm == "cmaes":
        cma_config = CmaEsConfig(lam=config.lam, sigma0=config.sigma0, patience=config.patience)
        return CmaEsBaseline(config.dim, cma_config, rng, pseudo_archive=archive)
    if config.algorithm in ("mapelites", "meline"):
        me_config = MapElitesConfig(
            sigma=config.sigma0,
            initial_population=config.initial_population,
            line_sigma=config.line_sigma,
            batch_size=config.batch_size,
        )
        return MapElites(archive, config.dim, me_config, rng, line=config.algorithm == "meline")
    me_config = CmaMeConfig(
        kind=EMITTER_KIND[config.algorithm],
        dim=config.dim,
        evaluations=config.evaluations,
        emitter_count=config.emitter_count,
        lam=config.lam,
        sigma0=config.sigma0,
        patience=config.patience,
    )
    return Scheduler(make_emitters(me_config, archive, rng), archive)


def _algorithm_state(algorithm) -> dict[str, np.ndarray]:
    if isinstance(algorithm, Scheduler):
        states = {}
        for i, e in enumerate(algorithm.emitters):
            states.update({f"emitter{i}_{k}": v for k, v in e.cma.to_arrays().items()})
        return states
    if isinstance(algorithm, CmaEsBaseline):
        return algorithm.cma.to_arrays()
    return {}


@dataclass
class TrialResult:
    summary: dict
    snapshots: list[MetricsSnapshot]
    archive: GridArchive = field(repr=False)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_metrics(path: Path, snapshots: list[MetricsSnapshot]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for s in snapshots:
            writer.writerow([s.evaluations, _fmt(s.qd_score), _fmt(s.coverage),
                             _fmt(s.max_fitness), _fmt(s.max_raw_fitness), _fmt(s.wall_time_s)])


def _summarize(config: ExperimentConfig, archive: GridArchive, progress: RunProgress) -> dict:
    best = archive.best
    return {
        "algorithm": config.algorithm,
        "function": config.function,
        "dim": config.dim,
        "evaluations": progress.evaluations,
        "seed": config.seed,
        "qd_score": archive.qd_score(),
        "coverage": archive.coverage(),
        "max_fitness": best.fitness if best is not None else 0.0,
        "cells_occupied": len(archive),
        "total_cells": archive.bounds.total_cells,
        "max_raw_fitness": best.raw_fitness if best is not None else None,
        "invalid_evaluations": progress.invalid,
        "config": dataclasses.asdict(config),
    }


def _write_checkpoint(out: Path, config, archive, progress, algorithm, exc) -> Path:
    ckpt = out / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    archive.to_csv(ckpt / "archive.csv")
    write_metrics(ckpt / "metrics.csv", progress.snapshots)
    state = _algorithm_state(algorithm)
    if state:
        np.savez(ckpt / "state.npz", **state)
    info = {"error": f"{type(exc).__name__}: {exc}", "evaluations_completed": progress.evaluations,
            "config": dataclasses.asdict(config)}
    (ckpt / "checkpoint.json").write_text(json.dumps(info, indent=2) + "\n")
    return ckpt


def run_trial(config: ExperimentConfig, evaluator=None) -> TrialResult:
    """Run one seeded trial and, if ``config.output_dir`` is set, write its files.

    Files: ``metrics.csv``, ``summary.json``, ``archive.csv`` and
    ``genomes.txt``. Unless ``record_wall_time`` is on, all of them are
    byte-identical across re-runs of the same config.

    Args:
        config: Trial configuration; ``trials`` is ignored here.
        evaluator: Override for the point evaluator (defaults to the toy domain,
            parallel when ``config.workers > 1``).

    Raises:
        TrialError: The run failed; a checkpoint directory was written when
            ``output_dir`` is set.
    """
    domain = ToyDomain(config.function, config.dim, config.resolution)
    archive = GridArchive(domain.bounds)
    rng = np.random.default_rng(config.seed)
    algorithm = build_algorithm(config, archive, rng)
    out = Path(config.output_dir) if config.output_dir else None
    own_evaluator = evaluator is None
    if own_evaluator:
        evaluator = BatchEvaluator(domain, config.workers)
    progress = RunProgress()
    start = time.perf_counter()
    try:
        drive(algorithm, evaluator, config.evaluations, archive, config.snapshot_interval,
              progress, record_wall_time=config.record_wall_time)
    except Exception as exc:
        ckpt = None
        if out is not None:
            ckpt = _write_checkpoint(out, config, archive, progress, algorithm, exc)
        raise TrialError(f"{config.label} seed {config.seed} failed after "
                         f"{progress.evaluations} evaluations: {exc}", ckpt) from exc
    finally:
        if own_evaluator:
            evaluator.close()
    elapsed = time.perf_counter() - start
    log.info("%s seed %d: %d evals in %.1fs, coverage %.4f", config.label, config.seed,
             progress.evaluations, elapsed, archive.coverage())

    summary = _summarize(config, archive, progress)
    if config.record_wall_time:
        summary["wall_time_s"] = elapsed
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "metrics.csv", progress.snapshots)
        archive.to_csv(out / "archive.csv", out / "genomes.txt")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return TrialResult(summary, progress.snapshots, archive)


SUITE_COLUMNS = ["label", "algorithm", "function", "dim", "trials", "completed",
                 "max_fitness", "cells_occupied_pct", "qd_score", "errors"]


def load_suite(path: str | Path) -> list[ExperimentConfig]:
    """Read a suite file (YAML, so plain JSON works too).

    Either a list of experiment records, or a mapping with optional
    ``defaults`` merged under every entry of ``experiments``.
    """
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, list):
        defaults, entries = {}, data
    elif isinstance(data, dict) and "experiments" in data:
        defaults, entries = data.get("defaults") or {}, data["experiments"]
    else:
        raise ConfigError("suite file must be a list or a mapping with 'experiments'")
    if not entries:
        raise ConfigError("suite file lists no experiments")
    configs = []
    for i, entry in enumerate(entries):
        try:
            configs.append(ExperimentConfig.from_mapping({**defaults, **entry}))
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"experiment #{i}: {exc}") from exc
    return configs


def run_suite(configs: list[ExperimentConfig], output_dir: str | Path | None = None) -> list[dict]:
    """Run every config for its ``trials`` seeds and tabulate mean results.

    A failing trial is recorded in its row's ``errors`` and the suite moves on.
    Writes ``suite.csv`` and ``suite.txt`` when ``output_dir`` is given.
    """
    if not configs:
        raise ConfigError("run_suite needs at least one config")
    out = Path(output_dir) if output_dir is not None else None
    rows = []
    for config in configs:
        summaries, errors = [], []
        for t in range(config.trials):
            seed = config.seed + t
            trial_dir = str(out / config.label / f"seed_{seed}") if out is not None else None
            trial = config.replace(seed=seed, output_dir=trial_dir, trials=1)
            try:
                summaries.append(run_trial(trial).summary)
            except TrialError as exc:
                log.error("%s", exc)
                errors.append(str(exc))
        row = {"label": config.label, "algorithm": config.algorithm,
               "function": config.function, "dim": config.dim, "trials": config.trials,
               "completed": len(summaries)}
        if summaries:
            row["max_fitness"] = float(np.mean([s["max_fitness"] for s in summaries]))
            row["cells_occupied_pct"] = float(np.mean([100.0 * s["coverage"] for s in summaries]))
            row["qd_score"] = float(np.mean([s["qd_score"] for s in summaries]))
        else:
            row.update(max_fitness=None, cells_occupied_pct=None, qd_score=None)
        row["errors"] = "; ".join(errors)
        rows.append(row)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "suite.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, SUITE_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        (out / "suite.txt").write_text(format_table(rows))
    return rows


def format_table(rows: list[dict]) -> str:
    """Fixed-width text table: Max Fitness, Cells Occupied and QD-Score per row."""
    header = ["Algorithm", "Function", "n", "Max Fitness", "Cells Occupied", "QD-Score", "Trials"]
    body = []
    for r in rows:
        ok = r["completed"] > 0
        body.append([
            r["algorithm"], r["function"], str(r["dim"]),
            f"{r['max_fitness']:.3f}" if ok else "n/a",
            f"{r['cells_occupied_pct']:.2f} %" if ok else "n/a",
            f"{r['qd_score']:,.0f}" if ok else "n/a",
            f"{r['completed']}/{r['trials']}",
        ])
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for line in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(line, widths)))
    return "\n".join(lines) + "\n"
