"""Container for the results of evaluating a batch of search points."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np


@dataclass
class EvaluatedBatch:
    """Per-point evaluation results, row-aligned with the input points.

    Attributes:
        behaviors: ``(batch, k)`` behavior descriptors.
        raw: ``(batch,)`` objective values in objective units (lower is better).
        fitness: ``(batch,)`` normalized fitness in ``[0, 100]`` (higher is better).
        valid: ``(batch,)`` mask; False rows had a non-finite result and must
            not be inserted anywhere.
    """

    behaviors: np.ndarray
    raw: np.ndarray
    fitness: np.ndarray
    valid: np.ndarray

    @classmethod
    def build(cls, behaviors, raw, fitness) -> "EvaluatedBatch":
        behaviors = np.atleast_2d(np.asarray(behaviors, dtype=np.float64))
        raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        fitness = np.asarray(fitness, dtype=np.float64).reshape(-1)
        valid = (
            np.isfinite(raw) & np.isfinite(fitness) & np.isfinite(behaviors).all(axis=1)
        )
        return cls(behaviors, raw, fitness, valid)

    def __len__(self) -> int:
        return len(self.raw)

    def records(self) -> list[tuple[np.ndarray, float, float]]:
        """``(behavior, raw, fitness)`` tuples in input order."""
        return [(b, float(r), float(f)) for b, r, f in zip(self.behaviors, self.raw, self.fitness)]

    @classmethod
    def concatenate(cls, parts: list["EvaluatedBatch"]) -> "EvaluatedBatch":
        return cls(
            np.concatenate([p.behaviors for p in parts]),
            np.concatenate([p.raw for p in parts]),
            np.concatenate([p.fitness for p in parts]),
            np.concatenate([p.valid for p in parts]),
        )


# Maps a ``(batch, n)`` array of search points to their evaluations.
Evaluator = Callable[[np.ndarray], EvaluatedBatch]
