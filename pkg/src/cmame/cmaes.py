"""CMA-ES strategy core shared by the baseline optimizer and the emitters.

Standard (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation,
rank-one plus rank-mu covariance update and a lazily refreshed
eigendecomposition.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

SIGMA_FLOOR = 1e-12
CONDITION_CEILING = 1e14
EIGEN_FLOOR = 1e-20
DEFAULT_PATIENCE = 50


class RestartRequired(RuntimeError):
    """The distribution has degenerated and the owner must reset it."""


def _expected_norm(n: int) -> float:
    # E||N(0, I)|| approximation
    return math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))


@dataclass
class CmaParams:
    """Strategy parameters derived from dimension, population size and weights."""

    n: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c1: float
    c_mu: float
    chi_n: float
    _truncated: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def default(cls, n: int, lam: int) -> "CmaParams":
        """Canonical defaults: ``mu = lam // 2``, log-linear positive weights."""
        if n < 1 or lam < 2:
            raise ValueError("need n >= 1 and lambda >= 2")
        mu = lam // 2
        w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        return cls.from_weights(n, lam, w)

    @classmethod
    def from_weights(cls, n: int, lam: int, weights) -> "CmaParams":
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(w) < 1 or np.any(w <= 0) or np.any(np.diff(w) > 0):
            raise ValueError("weights must be positive and non-increasing")
        w = w / w.sum()
        mu_eff = 1.0 / float(np.sum(w * w))
        c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
        d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
        c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
        c1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
        c_mu = min(1.0 - c1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
        return cls(n, lam, len(w), w, mu_eff, c_sigma, d_sigma, c_c, c1, c_mu, _expected_norm(n))

    def truncated(self, k: int) -> "CmaParams":
        """Parameters for an update with only ``k <= mu`` parents.

        The weight vector is cut to its first ``k`` entries and renormalized;
        the learning rates are recomputed from the resulting ``mu_eff``.
        """
        if k == self.mu:
            return self
        if not 1 <= k <= self.mu:
            raise ValueError(f"parent count {k} outside [1, {self.mu}]")
        cached = self._truncated.get(k)
        if cached is None:
            cached = CmaParams.from_weights(self.n, self.lam, self.weights[:k])
            self._truncated[k] = cached
        return cached

    @property
    def eigen_interval(self) -> int:
        """Number of updates between eigendecompositions."""
        return max(1, int(1.0 / (10.0 * self.n * (self.c1 + self.c_mu))))


@dataclass
class CmaState:
    """Mutable search distribution ``N(mean, sigma^2 C)`` plus evolution paths.

    ``eigvecs`` and ``stds`` cache the decomposition ``C = B diag(stds^2) B^T``;
    ``eigen_age`` counts updates since it was computed.
    """

    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0
    eigvecs: np.ndarray | None = None
    stds: np.ndarray | None = None
    eigen_age: int = 0
    repairs: int = 0

    @classmethod
    def initial(cls, mean, sigma0: float, cov=None) -> "CmaState":
        mean = np.array(mean, dtype=np.float64)
        n = len(mean)
        cov = np.eye(n) if cov is None else np.array(cov, dtype=np.float64)
        state = cls(mean, cov, float(sigma0), np.zeros(n), np.zeros(n))
        state.refresh_eigen()
        return state

    @property
    def n(self) -> int:
        return len(self.mean)

    def refresh_eigen(self):
        """Recompute the eigendecomposition, flooring non-positive eigenvalues."""
        self.cov = 0.5 * (self.cov + self.cov.T)
        if not np.all(np.isfinite(self.cov)):
            raise RestartRequired("covariance has non-finite entries")
        vals, vecs = np.linalg.eigh(self.cov)
        if vals[0] <= 0.0:
            vals = np.maximum(vals, EIGEN_FLOOR)
            self.cov = (vecs * vals) @ vecs.T
            self.repairs += 1
        self.eigvecs = vecs
        self.stds = np.sqrt(vals)
        self.eigen_age = 0

    def condition_number(self) -> float:
        return float((self.stds.max() / self.stds.min()) ** 2)

    def is_finite(self) -> bool:
        return bool(
            math.isfinite(self.sigma)
            and np.all(np.isfinite(self.mean))
            and np.all(np.isfinite(self.cov))
            and np.all(np.isfinite(self.p_sigma))
            and np.all(np.isfinite(self.p_c))
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Flat arrays suitable for ``np.savez`` checkpoints."""
        return {
            "mean": self.mean,
            "cov": self.cov,
            "sigma": np.array(self.sigma),
            "p_sigma": self.p_sigma,
            "p_c": self.p_c,
            "generation": np.array(self.generation),
        }


def _ensure_eigen(state: CmaState, params: CmaParams):
    if state.eigvecs is None or state.eigen_age >= params.eigen_interval:
        state.refresh_eigen()


def sample(state: CmaState, params: CmaParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` points from ``N(m, sigma^2 C)`` as a ``(count, n)`` array.

    Raises:
        RestartRequired: The state holds non-finite values.
    """
    if not state.is_finite():
        raise RestartRequired("distribution has non-finite values")
    _ensure_eigen(state, params)
    z = rng.standard_normal((count, state.n))
    return state.mean + state.sigma * ((z * state.stds) @ state.eigvecs.T)


def step_size_factor(p_sigma_norm: float, params: CmaParams) -> float:
    """Multiplicative sigma change of cumulative step-size adaptation."""
    return math.exp((params.c_sigma / params.d_sigma) * (p_sigma_norm / params.chi_n - 1.0))


def update(state: CmaState, params: CmaParams, ranked_parents) -> CmaState:
    """Move the distribution towards ``ranked_parents`` (best first), in place.

    Fewer than ``mu`` parents truncate the weight vector; see
    :meth:`CmaParams.truncated`.
    """
    parents = np.atleast_2d(np.asarray(ranked_parents, dtype=np.float64))
    k = len(parents)
    if k == 0:
        raise ValueError("update needs at least one parent; restart instead")
    p = params.truncated(k)
    _ensure_eigen(state, params)
    n = state.n
    w = p.weights

    old_mean = state.mean
    sigma = state.sigma
    new_mean = w @ parents
    y = (parents - old_mean) / sigma
    y_w = (new_mean - old_mean) / sigma

    # C^{-1/2} y_w through the cached decomposition
    inv_sqrt_y = state.eigvecs @ ((state.eigvecs.T @ y_w) / state.stds)
    state.p_sigma = (1.0 - p.c_sigma) * state.p_sigma + math.sqrt(
        p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff
    ) * inv_sqrt_y
    ps_norm = float(np.linalg.norm(state.p_sigma))
    decay = 1.0 - (1.0 - p.c_sigma) ** (2 * (state.generation + 1))
    h_sigma = ps_norm / math.sqrt(decay) < (1.4 + 2.0 / (n + 1.0)) * p.chi_n

    state.p_c = (1.0 - p.c_c) * state.p_c
    if h_sigma:
        state.p_c += math.sqrt(p.c_c * (2.0 - p.c_c) * p.mu_eff) * y_w
    delta_h = 0.0 if h_sigma else p.c_c * (2.0 - p.c_c)

    rank_mu = (y.T * w) @ y
    state.cov = (
        (1.0 - p.c1 - p.c_mu + p.c1 * delta_h) * state.cov
        + p.c1 * np.outer(state.p_c, state.p_c)
        + p.c_mu * rank_mu
    )
    state.sigma = sigma * step_size_factor(ps_norm, p)
    state.mean = new_mean
    state.generation += 1
    state.eigen_age += 1
    if state.eigen_age >= params.eigen_interval and np.all(np.isfinite(state.cov)):
        state.refresh_eigen()
    return state


def should_restart(
    state: CmaState,
    params: CmaParams,
    recent_improvement: Sequence[bool] = (),
    patience: int = DEFAULT_PATIENCE,
) -> bool:
    """True when the run stalled for ``patience`` generations or the state degenerated.

    Args:
        recent_improvement: One flag per past generation, oldest first; True
            when that generation improved on whatever the owner tracks.
    """
    if not state.is_finite():
        return True
    if state.sigma < SIGMA_FLOOR:
        return True
    if state.stds is not None and state.condition_number() > CONDITION_CEILING:
        return True
    if patience and len(recent_improvement) >= patience:
        if not any(list(recent_improvement)[-patience:]):
            return True
    return False


def reset(state: CmaState, new_mean, sigma0: float) -> CmaState:
    """Restart the distribution at ``new_mean`` with identity covariance, in place."""
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    new_mean = np.array(new_mean, dtype=np.float64)
    if new_mean.shape != state.mean.shape:
        raise ValueError("reset must preserve the search dimension")
    n = len(new_mean)
    state.mean = new_mean
    state.cov = np.eye(n)
    state.sigma = float(sigma0)
    state.p_sigma = np.zeros(n)
    state.p_c = np.zeros(n)
    state.generation = 0
    state.refresh_eigen()
    return state
