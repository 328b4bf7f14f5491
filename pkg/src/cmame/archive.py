"""Uniform grid archive over a bounded behavior space."""

from __future__ import annotations

import csv
import enum
import os
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np


class EmptyArchiveError(LookupError):
    """Raised when an elite is requested from an archive with no occupied cells."""


@dataclass(frozen=True)
class BehaviorBounds:
    """Axis-aligned rectangle in behavior space with a per-dimension cell count.

    Args:
        lower: Lower bound of every behavior dimension.
        upper: Upper bound of every behavior dimension.
        resolution: Number of cells along every behavior dimension.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        resolution = tuple(int(r) for r in self.resolution)
        if not (len(lower) == len(upper) == len(resolution)) or not lower:
            raise ValueError(
                "lower, upper and resolution must be non-empty and of equal length"
            )
        for dim, (lo, hi, res) in enumerate(zip(lower, upper, resolution)):
            if not lo < hi:
                raise ValueError(f"dimension {dim}: lower {lo} must be < upper {hi}")
            if res < 1:
                raise ValueError(f"dimension {dim}: resolution {res} must be >= 1")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dims(self) -> int:
        return len(self.resolution)

    @property
    def total_cells(self) -> int:
        return int(np.prod(self.resolution))

    def edges(self, dim: int) -> np.ndarray:
        """Cell boundaries along ``dim``, ``resolution[dim] + 1`` values."""
        return np.linspace(self.lower[dim], self.upper[dim], self.resolution[dim] + 1)


def cell_index(behavior: Sequence[float], bounds: BehaviorBounds) -> tuple[int, ...]:
    """Grid coordinates of the cell containing ``behavior``.

    Values outside the bounds are clamped to the boundary cell, so every finite
    behavior maps to some cell.
    """
    if len(behavior) != bounds.dims:
        raise ValueError(f"expected {bounds.dims} behavior values, got {len(behavior)}")
    out = []
    for b, lo, hi, res in zip(behavior, bounds.lower, bounds.upper, bounds.resolution):
        i = int(np.floor((b - lo) / (hi - lo) * res))
        out.append(min(max(i, 0), res - 1))
    return tuple(out)


def cell_indices(behaviors: np.ndarray, bounds: BehaviorBounds) -> np.ndarray:
    """Vectorized :func:`cell_index` for a ``(batch, k)`` array; returns int64."""
    behaviors = np.asarray(behaviors, dtype=np.float64)
    lower = np.asarray(bounds.lower)
    upper = np.asarray(bounds.upper)
    res = np.asarray(bounds.resolution)
    scaled = np.floor((behaviors - lower) / (upper - lower) * res)
    # NaN rows land in cell 0 here; callers must drop invalid rows themselves.
    scaled = np.nan_to_num(scaled, nan=0.0, posinf=np.inf, neginf=-np.inf)
    return np.clip(scaled, 0, res - 1).astype(np.int64)


@dataclass(slots=True)
class Elite:
    """A solution stored in the archive.

    ``raw_fitness`` is in objective units; ``fitness`` is the normalized
    quality in ``[0, 100]`` that the archive compares on.
    """

    point: np.ndarray
    behavior: np.ndarray
    raw_fitness: float
    fitness: float


class InsertStatus(enum.Enum):
    NEW_CELL = "new_cell"
    IMPROVED = "improved"
    REJECTED = "rejected"


@dataclass(frozen=True, slots=True)
class InsertResult:
    status: InsertStatus
    delta: float = 0.0

    @property
    def new_cell(self) -> bool:
        return self.status is InsertStatus.NEW_CELL

    @property
    def accepted(self) -> bool:
        return self.status is not InsertStatus.REJECTED


_REJECTED = InsertResult(InsertStatus.REJECTED)


class GridArchive:
    """MAP-Elites map: at most one elite per cell, replaced only on strict improvement.

    Storage is sparse (a dict keyed by cell coordinates). The QD-score is kept
    as a running sum of insertion gains so it is exactly monotone.

    Args:
        bounds: Geometry of the behavior space.
    """

    def __init__(self, bounds: BehaviorBounds):
        self.bounds = bounds
        self._cells: dict[tuple[int, ...], Elite] = {}
        # Occupied cells in first-fill order; cells are never vacated.
        self._order: list[tuple[int, ...]] = []
        self._qd_score = 0.0
        self._best: Elite | None = None

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self._cells

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], Elite]]:
        for cell in self._order:
            yield cell, self._cells[cell]

    def get(self, cell) -> Elite | None:
        return self._cells.get(tuple(cell))

    @property
    def best(self) -> Elite | None:
        """Elite with the highest normalized fitness, or None when empty."""
        return self._best

    def try_insert(self, candidate: Elite, cell: tuple[int, ...] | None = None) -> InsertResult:
        """Offer ``candidate`` to its cell.

        Args:
            candidate: Solution to insert; its ``fitness`` must lie in ``[0, 100]``.
            cell: Precomputed cell coordinates of ``candidate.behavior``. Computed
                with :func:`cell_index` when omitted.

        Returns:
            ``NEW_CELL`` with ``delta`` equal to the fitness when the cell was
            empty, ``IMPROVED`` with the fitness gain when the incumbent was
            strictly worse, ``REJECTED`` otherwise (ties included).
        """
        fitness = candidate.fitness
        if not 0.0 <= fitness <= 100.0:
            raise ValueError(f"fitness {fitness!r} outside [0, 100]")
        if cell is None:
            cell = cell_index(candidate.behavior, self.bounds)
        incumbent = self._cells.get(cell)
        if incumbent is None:
            self._cells[cell] = candidate
            self._order.append(cell)
            result = InsertResult(InsertStatus.NEW_CELL, fitness)
        elif fitness > incumbent.fitness:
            self._cells[cell] = candidate
            result = InsertResult(InsertStatus.IMPROVED, fitness - incumbent.fitness)
        else:
            return _REJECTED
        self._qd_score += result.delta
        if self._best is None or fitness > self._best.fitness:
            self._best = candidate
        return result

    def qd_score(self) -> float:
        """Sum of normalized fitness over occupied cells."""
        return self._qd_score

    def coverage(self) -> float:
        """Fraction of all cells that hold an elite."""
        return len(self._cells) / self.bounds.total_cells

    def random_elite(self, rng: np.random.Generator) -> Elite:
        """Elite from a uniformly chosen occupied cell.

        Raises:
            EmptyArchiveError: No cell is occupied.
        """
        if not self._order:
            raise EmptyArchiveError("archive is empty")
        return self._cells[self._order[int(rng.integers(len(self._order)))]]

    def elite_at(self, position: int) -> Elite:
        """Elite of the ``position``-th occupied cell in first-fill order."""
        return self._cells[self._order[position]]

    def rows(self) -> list[tuple[tuple[int, ...], Elite]]:
        """Occupied cells sorted by coordinates; the dump row order."""
        return sorted(self._cells.items())

    def to_csv(self, path: str | os.PathLike, genomes_path: str | os.PathLike | None = None):
        """Write the archive-dump CSV and, optionally, the parallel genome file."""
        rows = self.rows()
        k = self.bounds.dims
        cell_cols = ["cell_x", "cell_y"] if k == 2 else [f"cell_{i}" for i in range(k)]
        header = cell_cols + [f"behavior_{i}" for i in range(k)] + ["raw_fitness", "fitness"]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for cell, elite in rows:
                writer.writerow(
                    [*cell, *(repr(float(b)) for b in elite.behavior),
                     repr(float(elite.raw_fitness)), repr(float(elite.fitness))]
                )
        if genomes_path is not None:
            with open(genomes_path, "w") as f:
                for _, elite in rows:
                    f.write(" ".join(repr(float(v)) for v in elite.point) + "\n")
