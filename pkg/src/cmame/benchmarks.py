"""Linear-projection toy domain: offset sphere and Rastrigin objectives.

Behavior is the pair of half-sums of the clipped search point, which makes the
reachable behavior space an analytically known rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cmame.archive import BehaviorBounds, cell_indices
from cmame.evaluation import EvaluatedBatch

CLIP_LIMIT = 5.12
OFFSET = CLIP_LIMIT * 0.4
FUNCTIONS = ("sphere", "rastrigin")


def sphere_raw(x, offset: float = OFFSET):
    """Offset sphere; accepts a point or a ``(batch, n)`` array."""
    y = np.asarray(x, dtype=np.float64) - offset
    return np.sum(y * y, axis=-1)


def rastrigin_raw(x, offset: float = OFFSET):
    """Offset Rastrigin; accepts a point or a ``(batch, n)`` array."""
    y = np.asarray(x, dtype=np.float64) - offset
    n = y.shape[-1]
    return 10.0 * n + np.sum(y * y - 10.0 * np.cos(2.0 * np.pi * y), axis=-1)


def clip(v):
    """Identity inside [-5.12, 5.12], ``5.12 / v`` outside."""
    v = np.asarray(v, dtype=np.float64)
    inside = np.abs(v) <= CLIP_LIMIT
    # The divisor is never 0 where it is used; the where guards the masked lanes.
    out = np.where(inside, v, CLIP_LIMIT / np.where(inside, 1.0, v))
    return out if out.ndim else float(out)


def project(x) -> np.ndarray:
    """Sums of the clipped first and second halves of ``x``.

    Works on a single point (returns shape ``(2,)``) or a batch (``(batch, 2)``).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("projection needs at least 2 search dimensions")
    c = clip(x)
    half = n // 2
    return np.stack([c[..., :half].sum(axis=-1), c[..., half:].sum(axis=-1)], axis=-1)


def worst_raw(function: str, n: int) -> float:
    """Normalization scale: an upper bound of the objective over the clipped box."""
    span = (CLIP_LIMIT + OFFSET) ** 2
    if function == "sphere":
        return n * span
    if function == "rastrigin":
        return n * (span + 20.0)
    raise ValueError(f"unknown function {function!r}; expected one of {FUNCTIONS}")


def normalize_fitness(raw, function: str, n: int):
    """Map raw objective values to ``[0, 100]`` with 100 optimal."""
    normed = 100.0 * (1.0 - np.asarray(raw, dtype=np.float64) / worst_raw(function, n))
    normed = np.clip(normed, 0.0, 100.0)
    return normed if normed.ndim else float(normed)


def behavior_bounds(n: int, resolution: int) -> BehaviorBounds:
    first = CLIP_LIMIT * (n // 2)
    second = CLIP_LIMIT * math.ceil(n / 2)
    return BehaviorBounds((-first, -second), (first, second), (resolution, resolution))


@dataclass(frozen=True)
class ToyDomain:
    """Objective plus clipped projection for an ``n``-dimensional search space.

    Instances are picklable, so they can be shipped to worker processes.
    """

    function: str
    n: int
    resolution: int = 100
    offset: float = OFFSET
    bounds: BehaviorBounds = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise ValueError(f"unknown function {self.function!r}; expected one of {FUNCTIONS}")
        if self.n < 2:
            raise ValueError("toy domain needs n >= 2")
        object.__setattr__(self, "bounds", behavior_bounds(self.n, self.resolution))

    def raw(self, x):
        if self.function == "sphere":
            return sphere_raw(x, self.offset)
        return rastrigin_raw(x, self.offset)

    def __call__(self, points: np.ndarray) -> EvaluatedBatch:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        with np.errstate(all="ignore"):
            raw = self.raw(points)
            fitness = normalize_fitness(raw, self.function, self.n)
            behaviors = project(points)
        return EvaluatedBatch.build(behaviors, raw, fitness)


def bates_narrowing_report(
    n_values, samples: int, resolution: int, rng: np.random.Generator, chunk: int = 20_000
) -> dict[int, float]:
    """Fraction of archive cells hit by uniform search-space samples, per dimension.

    Points are drawn uniformly from ``[-5.12, 5.12]^n``, projected and binned
    into the analytic behavior bounds at ``resolution x resolution``.
    """
    if samples < 10_000:
        raise ValueError("samples must be >= 10^4")
    report = {}
    for n in n_values:
        bounds = behavior_bounds(int(n), resolution)
        hit = np.zeros(bounds.resolution, dtype=bool)
        remaining = samples
        while remaining:
            size = min(chunk, remaining)
            x = rng.uniform(-CLIP_LIMIT, CLIP_LIMIT, size=(size, int(n)))
            idx = cell_indices(project(x), bounds)
            hit[idx[:, 0], idx[:, 1]] = True
            remaining -= size
        report[int(n)] = float(hit.mean())
    return report
