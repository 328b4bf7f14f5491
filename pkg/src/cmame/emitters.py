"""CMA-ME emitters and the scheduler that round-robins them over one archive.

Every emitter samples from its own CMA-ES distribution the same way; the kinds
differ only in how a finished generation is ranked and when they restart.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from cmame import cmaes
from cmame.archive import Elite, EmptyArchiveError, GridArchive, InsertResult, cell_indices
from cmame.cmaes import CmaParams, CmaState, RestartRequired
from cmame.evaluation import EvaluatedBatch, Evaluator
from cmame.metrics import DEFAULT_SNAPSHOT_INTERVAL, MetricsSnapshot, RunProgress, drive

EMITTER_KINDS = ("optimizing", "random_direction", "improvement")


@dataclass(slots=True)
class ParentRecord:
    point: np.ndarray
    behavior: np.ndarray
    fitness: float
    raw_fitness: float
    delta: float
    new_cell: bool
    index: int  # position within the generation


def rank_improvement(parents: Sequence[ParentRecord]) -> list[ParentRecord]:
    """New-cell parents by fitness, then improving parents by gain, both descending."""
    new = sorted((p for p in parents if p.new_cell), key=lambda p: -p.fitness)
    improved = sorted((p for p in parents if not p.new_cell), key=lambda p: -p.delta)
    return new + improved


def rank_random_direction(
    parents: Sequence[ParentRecord], mean_behavior: np.ndarray, bias: np.ndarray
) -> list[ParentRecord]:
    """Parents sorted by projection of ``behavior - mean_behavior`` onto ``bias``, descending."""
    keys = [-float(np.dot(p.behavior - mean_behavior, bias)) for p in parents]
    order = sorted(range(len(parents)), key=keys.__getitem__)
    return [parents[i] for i in order]


def rank_by_fitness(records: Sequence[ParentRecord]) -> list[ParentRecord]:
    """Fitness descending; ties by raw objective, then by sample index."""
    return sorted(records, key=lambda p: (-p.fitness, p.raw_fitness, p.index))


def random_unit_vector(dims: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(dims)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


class Emitter:
    """A CMA-ES instance that feeds on archive insertions.

    Subclasses implement :meth:`_record` (per returned solution) and
    :meth:`_end_generation` (after ``lam`` solutions came back).

    Args:
        archive: Archive shared by all emitters of a run.
        dim: Search-space dimension.
        sigma0: Initial and restart step size.
        lam: Solutions per generation.
        rng: Source of randomness owned by this emitter.
        x0: Initial mean; the origin when omitted.
    """

    kind = ""

    def __init__(
        self,
        archive: GridArchive,
        dim: int,
        sigma0: float = 0.5,
        lam: int = 37,
        rng: np.random.Generator | None = None,
        x0=None,
    ):
        self.archive = archive
        self.dim = dim
        self.sigma0 = float(sigma0)
        self.params = CmaParams.default(dim, lam)
        self.rng = np.random.default_rng() if rng is None else rng
        self.cma = CmaState.initial(np.zeros(dim) if x0 is None else x0, sigma0)
        self.parents: list[ParentRecord] = []
        self.generated_count = 0
        self.sampled_in_generation = 0
        self.restarts = 0
        self._returned = 0
        self._pending: np.ndarray | None = None

    @property
    def lam(self) -> int:
        return self.params.lam

    @property
    def generation_full(self) -> bool:
        return self.sampled_in_generation >= self.lam

    def generate_solution(self) -> np.ndarray:
        """Next sample of the current generation."""
        if self.generation_full:
            raise RuntimeError("all lambda solutions handed out; return them first")
        if self.sampled_in_generation == 0:
            try:
                self._pending = cmaes.sample(self.cma, self.params, self.lam, self.rng)
            except RestartRequired:
                self.restart()
                self._pending = cmaes.sample(self.cma, self.params, self.lam, self.rng)
        x = self._pending[self.sampled_in_generation]
        self.sampled_in_generation += 1
        self.generated_count += 1
        return x

    def return_solution(
        self,
        x: np.ndarray,
        behavior: np.ndarray,
        fitness: float,
        raw_fitness: float = float("nan"),
        cell: tuple[int, ...] | None = None,
        valid: bool = True,
    ) -> InsertResult | None:
        """Insert an evaluated solution and adapt once the generation is complete.

        Invalid (non-finite) solutions still count towards the generation but
        never touch the archive. Returns the insertion outcome, or None for
        invalid solutions.
        """
        result = None
        if valid:
            elite = Elite(np.array(x), np.array(behavior), float(raw_fitness), float(fitness))
            result = self.archive.try_insert(elite, cell)
        self._record(x, behavior, float(fitness), float(raw_fitness), result, self._returned)
        self._returned += 1
        if self._returned >= self.lam:
            self._end_generation()
            self.parents = []
            self._returned = 0
            self.sampled_in_generation = 0
            self._pending = None
        return result

    def restart(self):
        """Reset the distribution around a uniformly chosen elite (origin if none)."""
        try:
            mean = self.archive.random_elite(self.rng).point
        except EmptyArchiveError:
            mean = np.zeros(self.dim)
        cmaes.reset(self.cma, mean, self.sigma0)
        self.restarts += 1

    def _adapt(self, ranked: Sequence[ParentRecord]):
        top = ranked[: self.params.mu]
        cmaes.update(self.cma, self.params, np.array([p.point for p in top]))
        # Guards only against numerical breakdown; stall detection is per kind.
        if cmaes.should_restart(self.cma, self.params, patience=0):
            self.restart()

    def _record(self, x, behavior, fitness, raw_fitness, result, index):
        raise NotImplementedError

    def _end_generation(self):
        raise NotImplementedError


class ImprovementEmitter(Emitter):
    """Ranks archive improvements, new cells first; restarts when nothing improved."""

    kind = "improvement"

    def _record(self, x, behavior, fitness, raw_fitness, result, index):
        if result is not None and result.accepted:
            self.parents.append(
                ParentRecord(np.array(x), np.array(behavior), fitness, raw_fitness,
                             result.delta, result.new_cell, index)
            )

    def _end_generation(self):
        if self.parents:
            self._adapt(rank_improvement(self.parents))
        else:
            self.restart()


class RandomDirectionEmitter(Emitter):
    """Pushes improving solutions along a random behavior-space direction."""

    kind = "random_direction"

    def __init__(self, archive: GridArchive, dim: int, *args, **kwargs):
        super().__init__(archive, dim, *args, **kwargs)
        self.bias = random_unit_vector(archive.bounds.dims, self.rng)
        self._behaviors: list[np.ndarray] = []

    def restart(self):
        super().restart()
        self.bias = random_unit_vector(self.archive.bounds.dims, self.rng)

    def _record(self, x, behavior, fitness, raw_fitness, result, index):
        if result is None:
            return
        self._behaviors.append(np.array(behavior))
        if result.accepted:
            self.parents.append(
                ParentRecord(np.array(x), np.array(behavior), fitness, raw_fitness,
                             result.delta, result.new_cell, index)
            )

    def _end_generation(self):
        if self.parents:
            mean_behavior = np.mean(self._behaviors, axis=0)
            self._adapt(rank_random_direction(self.parents, mean_behavior, self.bias))
        else:
            self.restart()
        self._behaviors = []


class OptimizingEmitter(Emitter):
    """Plain CMA-ES selection on fitness; restarts from an elite when stalled.

    Args:
        patience: Generations without any archive improvement before a restart.
    """

    kind = "optimizing"

    def __init__(self, archive: GridArchive, dim: int, *args,
                 patience: int = cmaes.DEFAULT_PATIENCE, **kwargs):
        super().__init__(archive, dim, *args, **kwargs)
        self.patience = patience
        self.history: list[bool] = []
        self._improved = False

    def restart(self):
        super().restart()
        self.history = []

    def _record(self, x, behavior, fitness, raw_fitness, result, index):
        if result is None:
            return
        self._improved = self._improved or result.accepted
        self.parents.append(
            ParentRecord(np.array(x), np.array(behavior), fitness, raw_fitness,
                         result.delta, result.new_cell, index)
        )

    def _end_generation(self):
        self.history.append(self._improved)
        self._improved = False
        if not self.parents:
            self.restart()
            return
        self._adapt(rank_by_fitness(self.parents))
        if cmaes.should_restart(self.cma, self.params, self.history, self.patience):
            self.restart()


EMITTER_CLASSES: dict[str, type[Emitter]] = {
    cls.kind: cls for cls in (OptimizingEmitter, RandomDirectionEmitter, ImprovementEmitter)
}


class Scheduler:
    """Hands out solutions from the emitter that has generated the fewest so far.

    ``ask`` keeps drawing until the next chosen emitter has no samples left in
    its current generation, so a batch never straddles an adaptation step and
    applying ``tell`` in row order reproduces the one-at-a-time loop exactly.
    """

    def __init__(self, emitters: Sequence[Emitter], archive: GridArchive):
        if not emitters:
            raise ValueError("scheduler needs at least one emitter")
        kinds = {e.kind for e in emitters}
        if len(kinds) > 1:
            raise ValueError(f"emitters must share one kind, got {sorted(kinds)}")
        self.emitters = list(emitters)
        self.archive = archive
        self._owners: list[Emitter] = []

    def select_emitter(self) -> Emitter:
        """Emitter with the fewest generated solutions; lowest index on ties."""
        return min(self.emitters, key=lambda e: e.generated_count)

    def ask(self, max_count: int) -> np.ndarray:
        points, owners = [], []
        while len(points) < max_count:
            e = self.select_emitter()
            if e.generation_full:
                break
            points.append(e.generate_solution())
            owners.append(e)
        self._owners = owners
        return np.array(points).reshape(len(points), -1)

    def tell(self, points: np.ndarray, results: EvaluatedBatch):
        if len(points) != len(self._owners):
            raise ValueError("tell must receive exactly the points of the last ask")
        cells = cell_indices(results.behaviors, self.archive.bounds).tolist()
        for i, e in enumerate(self._owners):
            e.return_solution(
                points[i], results.behaviors[i], results.fitness[i], results.raw[i],
                tuple(cells[i]), bool(results.valid[i]),
            )
        self._owners = []


@dataclass
class CmaMeConfig:
    kind: str = "improvement"
    dim: int = 20
    evaluations: int = 250_000
    emitter_count: int = 15
    lam: int = 37
    sigma0: float = 0.5
    patience: int = cmaes.DEFAULT_PATIENCE

    def __post_init__(self):
        if self.kind not in EMITTER_CLASSES:
            raise ValueError(f"unknown emitter kind {self.kind!r}; expected one of {EMITTER_KINDS}")
        if self.emitter_count < 1 or self.lam < 2 or self.sigma0 <= 0 or self.evaluations < 0:
            raise ValueError("emitter_count >= 1, lam >= 2, sigma0 > 0, evaluations >= 0 required")


def make_emitters(config: CmaMeConfig, archive: GridArchive, rng: np.random.Generator) -> list[Emitter]:
    cls = EMITTER_CLASSES[config.kind]
    extra = {"patience": config.patience} if cls is OptimizingEmitter else {}
    return [
        cls(archive, config.dim, config.sigma0, config.lam, rng=child, **extra)
        for child in rng.spawn(config.emitter_count)
    ]


def run_cma_me(
    config: CmaMeConfig,
    evaluate: Evaluator,
    archive: GridArchive,
    rng: np.random.Generator,
    snapshot_interval: int = DEFAULT_SNAPSHOT_INTERVAL,
    progress: RunProgress | None = None,
) -> tuple[GridArchive, list[MetricsSnapshot]]:
    """Generate ``config.evaluations`` solutions with a homogeneous emitter population."""
    scheduler = Scheduler(make_emitters(config, archive, rng), archive)
    progress = drive(scheduler, evaluate, config.evaluations, archive, snapshot_interval, progress)
    return archive, progress.snapshots
