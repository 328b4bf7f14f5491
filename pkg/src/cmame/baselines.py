"""MAP-Elites, ME-(line) and plain CMA-ES, driven through the same ask/tell loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmame import cmaes
from cmame.archive import Elite, EmptyArchiveError, GridArchive, InsertResult, cell_indices
from cmame.cmaes import CmaParams, CmaState, RestartRequired
from cmame.evaluation import EvaluatedBatch, Evaluator
from cmame.metrics import DEFAULT_SNAPSHOT_INTERVAL, MetricsSnapshot, RunProgress, drive


@dataclass
class MapElitesConfig:
    """MAP-Elites / ME-(line) settings.

    ``line_sigma`` is the scale of the directional term of the line operator;
    it is ignored by plain MAP-Elites. ``batch_size`` candidates are generated
    from the archive as it stands at the start of each batch; 1 gives the
    strictly sequential algorithm.
    """

    sigma: float = 0.5
    initial_population: int = 100
    bootstrap_range: tuple[float, float] = (-5.12, 5.12)
    line_sigma: float = 0.2
    batch_size: int = 100

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if self.initial_population < 1:
            raise ValueError("initial_population must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        lo, hi = self.bootstrap_range
        if not lo < hi:
            raise ValueError("bootstrap_range must satisfy lo < hi")


def _insert_all(archive: GridArchive, points: np.ndarray, results: EvaluatedBatch) -> list:
    cells = cell_indices(results.behaviors, archive.bounds).tolist()
    out = []
    for i in range(len(points)):
        if not results.valid[i]:
            out.append(None)
            continue
        elite = Elite(points[i].copy(), results.behaviors[i].copy(),
                      float(results.raw[i]), float(results.fitness[i]))
        out.append(archive.try_insert(elite, tuple(cells[i])))
    return out


def _archive_points(archive: GridArchive, positions) -> np.ndarray:
    return np.array([archive.elite_at(int(p)).point for p in positions])


def isotropic_variation(archive: GridArchive, count: int, sigma: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Uniformly chosen elites plus ``sigma * N(0, I)``."""
    parents = _archive_points(archive, rng.integers(len(archive), size=count))
    return parents + sigma * rng.standard_normal(parents.shape)


def line_variation(archive: GridArchive, count: int, sigma1: float, sigma2: float,
                   rng: np.random.Generator) -> np.ndarray:
    """``x + sigma1 N(0, I) + sigma2 (y - x) N(0, 1)`` for distinct elites x, y."""
    size = len(archive)
    first = rng.integers(size, size=count)
    second = rng.integers(size - 1, size=count)
    second += second >= first  # uniform over the other elites
    x = _archive_points(archive, first)
    y = _archive_points(archive, second)
    iso = sigma1 * rng.standard_normal(x.shape)
    line = sigma2 * rng.standard_normal((count, 1))
    return x + iso + line * (y - x)


class MapElites:
    """Uniform bootstrap followed by Gaussian (or line) mutation of random elites.

    Args:
        archive: Archive to fill.
        dim: Search-space dimension.
        config: Operator settings.
        rng: Random source.
        line: Use the line operator instead of isotropic mutation.
    """

    def __init__(self, archive: GridArchive, dim: int, config: MapElitesConfig,
                 rng: np.random.Generator, line: bool = False):
        self.archive = archive
        self.dim = dim
        self.config = config
        self.rng = rng
        self.line = line
        self.bootstrapped = 0

    def ask(self, max_count: int) -> np.ndarray:
        cfg = self.config
        count = min(max_count, cfg.batch_size)
        if self.bootstrapped < cfg.initial_population or len(self.archive) == 0:
            count = min(count, max(1, cfg.initial_population - self.bootstrapped))
            lo, hi = cfg.bootstrap_range
            return self.rng.uniform(lo, hi, size=(count, self.dim))
        if self.line and len(self.archive) >= 2:
            return line_variation(self.archive, count, cfg.sigma, cfg.line_sigma, self.rng)
        return isotropic_variation(self.archive, count, cfg.sigma, self.rng)

    def tell(self, points: np.ndarray, results: EvaluatedBatch):
        if self.bootstrapped < self.config.initial_population or len(self.archive) == 0:
            self.bootstrapped += len(points)
        _insert_all(self.archive, points, results)


def map_elites_step(archive: GridArchive, config: MapElitesConfig, evaluate: Evaluator,
                    rng: np.random.Generator, dim: int | None = None) -> InsertResult | None:
    """One MAP-Elites iteration: perturb a random elite, evaluate, insert.

    An empty archive is seeded with a uniform draw from ``bootstrap_range``
    instead (``dim`` is then required). Returns None if the evaluation was
    non-finite.
    """
    if len(archive) == 0:
        if dim is None:
            raise ValueError("dim is required to bootstrap an empty archive")
        x = rng.uniform(*config.bootstrap_range, size=(1, dim))
    else:
        x = isotropic_variation(archive, 1, config.sigma, rng)
    return _insert_all(archive, x, evaluate(x))[0]


def me_line_step(archive: GridArchive, config: MapElitesConfig, evaluate: Evaluator,
                 rng: np.random.Generator, dim: int | None = None) -> InsertResult | None:
    """One ME-(line) iteration; falls back to :func:`map_elites_step` below two elites."""
    if len(archive) < 2:
        return map_elites_step(archive, config, evaluate, rng, dim)
    x = line_variation(archive, 1, config.sigma, config.line_sigma, rng)
    return _insert_all(archive, x, evaluate(x))[0]


@dataclass
class CmaEsConfig:
    lam: int = 500
    sigma0: float = 0.5
    patience: int = cmaes.DEFAULT_PATIENCE
    tolerance: float = 1e-12  # minimum raw-objective gain that counts as progress

    def __post_init__(self):
        if self.lam < 2 or self.sigma0 <= 0:
            raise ValueError("lam >= 2 and sigma0 > 0 required")


class CmaEsBaseline:
    """CMA-ES that only optimizes fitness; restarts from its best-so-far point.

    Every evaluated solution is offered to ``pseudo_archive`` (if given) purely
    for scoring; insertion results never reach the optimizer.
    """

    def __init__(self, dim: int, config: CmaEsConfig, rng: np.random.Generator,
                 pseudo_archive: GridArchive | None = None, x0=None):
        self.dim = dim
        self.config = config
        self.rng = rng
        self.pseudo_archive = pseudo_archive
        self.params = CmaParams.default(dim, config.lam)
        self.cma = CmaState.initial(np.zeros(dim) if x0 is None else x0, config.sigma0)
        self.best_point: np.ndarray | None = None
        self.best_fitness = -np.inf
        self.best_raw = np.inf
        self.history: list[bool] = []
        self.restarts = 0
        self._generation: np.ndarray | None = None
        self._handed = 0
        self._returned: list[tuple[float, float, int, np.ndarray]] = []
        self._told = 0
        self._best_at_generation_start = np.inf

    def ask(self, max_count: int) -> np.ndarray:
        if self._handed == 0:
            try:
                self._generation = cmaes.sample(self.cma, self.params, self.params.lam, self.rng)
            except RestartRequired:
                self.restart()
                self._generation = cmaes.sample(self.cma, self.params, self.params.lam, self.rng)
        count = min(max_count, self.params.lam - self._handed)
        out = self._generation[self._handed:self._handed + count]
        self._handed += count
        return out

    def tell(self, points: np.ndarray, results: EvaluatedBatch):
        if self.pseudo_archive is not None:
            _insert_all(self.pseudo_archive, points, results)
        for i in range(len(points)):
            self._told += 1
            if not results.valid[i]:
                continue
            fit, raw = float(results.fitness[i]), float(results.raw[i])
            self._returned.append((-fit, raw, self._told, points[i]))
            if (fit, -raw) > (self.best_fitness, -self.best_raw):
                self.best_fitness, self.best_raw = fit, raw
                self.best_point = points[i].copy()
        if self._told >= self.params.lam:
            self._end_generation()

    def _end_generation(self):
        # sort key: fitness descending, raw objective ascending, sample order
        ranked = sorted(self._returned, key=lambda r: r[:3])
        improved = self._best_at_generation_start - self.best_raw > self.config.tolerance
        self.history.append(bool(improved))
        self._best_at_generation_start = self.best_raw
        if ranked:
            top = [r[3] for r in ranked[: self.params.mu]]
            cmaes.update(self.cma, self.params, np.array(top))
        if not ranked or cmaes.should_restart(self.cma, self.params, self.history,
                                              self.config.patience):
            self.restart()
        self._returned = []
        self._told = 0
        self._handed = 0

    def restart(self):
        mean = self.best_point if self.best_point is not None else np.zeros(self.dim)
        cmaes.reset(self.cma, mean, self.config.sigma0)
        self.history = []
        self.restarts += 1


def run_map_elites(config: MapElitesConfig, evaluate: Evaluator, archive: GridArchive,
                   dim: int, evaluations: int, rng: np.random.Generator, line: bool = False,
                   snapshot_interval: int = DEFAULT_SNAPSHOT_INTERVAL,
                   progress: RunProgress | None = None) -> tuple[GridArchive, list[MetricsSnapshot]]:
    algo = MapElites(archive, dim, config, rng, line=line)
    progress = drive(algo, evaluate, evaluations, archive, snapshot_interval, progress)
    return archive, progress.snapshots


def run_cma_es_baseline(config: CmaEsConfig, evaluate: Evaluator, pseudo_archive: GridArchive,
                        dim: int, evaluations: int, rng: np.random.Generator,
                        snapshot_interval: int = DEFAULT_SNAPSHOT_INTERVAL,
                        progress: RunProgress | None = None) -> tuple[CmaEsBaseline, list[MetricsSnapshot]]:
    algo = CmaEsBaseline(dim, config, rng, pseudo_archive)
    progress = drive(algo, evaluate, evaluations, pseudo_archive, snapshot_interval, progress)
    return algo, progress.snapshots


__all__ = [
    "CmaEsBaseline",
    "CmaEsConfig",
    "EmptyArchiveError",
    "MapElites",
    "MapElitesConfig",
    "isotropic_variation",
    "line_variation",
    "map_elites_step",
    "me_line_step",
    "run_cma_es_baseline",
    "run_map_elites",
]
