"""Ask/tell driver loop and the metrics stream it records."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from cmame.archive import GridArchive
from cmame.evaluation import EvaluatedBatch, Evaluator

DEFAULT_SNAPSHOT_INTERVAL = 1000


@dataclass(frozen=True)
class MetricsSnapshot:
    evaluations: int
    qd_score: float
    coverage: float
    max_fitness: float
    max_raw_fitness: float
    wall_time_s: float = 0.0

    @classmethod
    def of(cls, archive: GridArchive, evaluations: int, wall_time_s: float = 0.0):
        best = archive.best
        return cls(
            evaluations,
            archive.qd_score(),
            archive.coverage(),
            best.fitness if best is not None else 0.0,
            best.raw_fitness if best is not None else float("nan"),
            wall_time_s,
        )


class Algorithm(Protocol):
    """Anything that proposes points in batches and learns from their evaluations.

    ``tell`` must apply results strictly in row order; that is what makes a
    run independent of how the batch was evaluated.
    """

    def ask(self, max_count: int) -> np.ndarray: ...

    def tell(self, points: np.ndarray, results: EvaluatedBatch) -> None: ...


@dataclass
class RunProgress:
    evaluations: int = 0
    invalid: int = 0
    snapshots: list[MetricsSnapshot] = field(default_factory=list)


def drive(
    algorithm: Algorithm,
    evaluate: Evaluator,
    budget: int,
    archive: GridArchive,
    snapshot_interval: int = DEFAULT_SNAPSHOT_INTERVAL,
    progress: RunProgress | None = None,
    record_wall_time: bool = False,
) -> RunProgress:
    """Run ``algorithm`` for exactly ``budget`` evaluations.

    Batches are cut at snapshot boundaries so every snapshot lands on a
    multiple of ``snapshot_interval``, plus one at 0 evaluations and a final
    one at ``budget``.
    ``progress`` is updated in place, so a caller still sees the partial
    stream if ``evaluate`` raises.
    """
    if snapshot_interval < 1:
        raise ValueError("snapshot_interval must be >= 1")
    progress = RunProgress() if progress is None else progress
    start = time.perf_counter()
    if progress.evaluations == 0 and not progress.snapshots:
        progress.snapshots.append(MetricsSnapshot.of(archive, 0))
    while progress.evaluations < budget:
        to_boundary = snapshot_interval - progress.evaluations % snapshot_interval
        points = algorithm.ask(min(budget - progress.evaluations, to_boundary))
        results = evaluate(points)
        if len(results) != len(points):
            raise RuntimeError(f"evaluator returned {len(results)} results for {len(points)} points")
        algorithm.tell(points, results)
        progress.evaluations += len(points)
        progress.invalid += int(np.count_nonzero(~results.valid))
        if progress.evaluations % snapshot_interval == 0 or progress.evaluations == budget:
            wall = time.perf_counter() - start if record_wall_time else 0.0
            progress.snapshots.append(MetricsSnapshot.of(archive, progress.evaluations, wall))
    return progress
