"""Clipping-path experiments: repeated logging, estimation over a grid of
clipping constants, and the bias^2 / variance / MSE split of each curve.

Conventions
-----------
* ``variance`` and ``mse`` use the population divisor ``K`` so that
  ``mse == bias_sq + variance`` holds algebraically.
* ``std_error`` (the error-bar width) uses the sample standard deviation,
  divisor ``K - 1``, over ``sqrt(K)``.
* Repetition ``k`` logs its dataset from stream ``k`` of the master seed and
  that dataset is shared by every grid point (paired design).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from doubleclip.core import ClipConfig, ConfigError, cips, dcips, importance_weights, logging_mean
from doubleclip.oracle import exact_true_reward
from doubleclip.synth import (
    GaussianFeatureEnv,
    LinearSoftmaxPolicy,
    Seed,
    TabularEnvironment,
    evaluate_target_propensities,
    simulate,
    tabular_simulate,
    true_reward_mc,
)

logger = logging.getLogger(__name__)

ESTIMATORS = ("cips", "dcips")
TRUTH_STREAM = 2**63


def default_grid(points: int = 25, low: float = 1.0, high: float = 100.0) -> tuple[ClipConfig, ...]:
    """Log-spaced ``U = L`` values from ``low`` to ``high`` inclusive."""
    if points < 1:
        raise ConfigError("grid needs at least one point")
    values = np.geomspace(low, high, points) if points > 1 else np.array([float(low)])
    return tuple(ClipConfig.unison(float(v)) for v in values)


@dataclass(frozen=True)
class SweepConfig:
    grid: tuple[ClipConfig, ...] = field(default_factory=default_grid)
    n_rounds: int = 300
    repetitions: int = 100
    mode: str = "unison"
    true_reward_samples: int = 1_000_000

    def __post_init__(self) -> None:
        grid = tuple(
            g if isinstance(g, ClipConfig) else ClipConfig(upper=g[0], lower=g[1]) for g in self.grid
        )
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ConfigError("sweep grid is empty")
        if self.mode not in ("unison", "explicit"):
            raise ConfigError(f"unknown sweep mode {self.mode!r}")
        if self.mode == "unison" and any(g.upper != g.lower for g in grid):
            raise ConfigError("unison mode requires U == L at every grid point")
        if self.repetitions < 2:
            raise ConfigError("need at least two repetitions to estimate variance")
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be >= 1")
        if self.true_reward_samples < 2:
            raise ConfigError("true_reward_samples must be >= 2")


@dataclass(frozen=True)
class GridPointStats:
    mean_estimate: float
    std_error: float
    bias_sq: float
    variance: float
    mse: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    grid: tuple[ClipConfig, ...]
    stats: dict[str, tuple[GridPointStats, ...]]
    estimates: dict[str, np.ndarray]  # estimator -> (repetitions, grid points)
    logging_means: np.ndarray
    true_reward: float
    true_reward_se: float
    seed: int
    n_rounds: int
    repetitions: int

    @property
    def logging_mean_of_means(self) -> float:
        return _ordered_mean(self.logging_means)

    def best_point(self, estimator: str) -> tuple[ClipConfig, GridPointStats]:
        """Grid point with the smallest MSE (first one on ties)."""
        mses = [s.mse for s in self.stats[estimator]]
        i = int(np.argmin(mses))
        return self.grid[i], self.stats[estimator][i]


def _ordered_mean(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.cumsum(v)[-1] / v.shape[0])


def _check_estimates(estimates) -> np.ndarray:
    e = np.asarray(estimates, dtype=np.float64).reshape(-1)
    if e.shape[0] < 2:
        raise ValueError("need at least two estimates")
    return e


def decompose_error(estimates: Sequence[float], truth: float) -> tuple[float, float, float]:
    """Return ``(bias_sq, variance, mse)`` of ``estimates`` around ``truth``."""
    e = _check_estimates(estimates)
    if not np.isfinite(truth):
        raise ValueError("truth must be finite")
    mean = _ordered_mean(e)
    bias_sq = (mean - truth) ** 2
    variance = _ordered_mean((e - mean) ** 2)
    mse = _ordered_mean((e - truth) ** 2)
    return bias_sq, variance, mse


def standard_error(estimates: Sequence[float]) -> float:
    """Sample standard deviation over ``sqrt(K)``."""
    e = _check_estimates(estimates)
    return float(np.std(e, ddof=1) / np.sqrt(e.shape[0]))


def variance_standard_error(estimates: Sequence[float]) -> float:
    """Large-sample standard error of the population variance, ``sqrt((m4 - m2^2) / K)``."""
    e = _check_estimates(estimates)
    d = e - e.mean()
    m2 = np.mean(d**2)
    m4 = np.mean(d**4)
    return float(np.sqrt(max(m4 - m2**2, 0.0) / e.shape[0]))


Environment = Union[GaussianFeatureEnv, TabularEnvironment]


def _one_repetition(env, logging_policy, target_policy, cfg: SweepConfig, seed: Seed, k: int):
    stream = seed.stream(k)
    if isinstance(env, TabularEnvironment):
        data = tabular_simulate(env, cfg.n_rounds, stream)
    else:
        data = simulate(env, logging_policy, cfg.n_rounds, stream)
    w = importance_weights(evaluate_target_propensities(data, target_policy), data.logging_propensity)
    row = {name: np.empty(len(cfg.grid)) for name in ESTIMATORS}
    for j, clip in enumerate(cfg.grid):
        row["cips"][j] = cips(data, w, ClipConfig(upper=clip.upper)).value
        row["dcips"][j] = dcips(data, w, clip).value
    return row, logging_mean(data).value


def run_sweep(
    env: Environment,
    logging_policy: Optional[LinearSoftmaxPolicy],
    target_policy,
    cfg: SweepConfig,
    seed: Union[Seed, int],
    max_workers: Optional[int] = None,
) -> SweepResult:
    """Estimate the target value with cIPS and dcIPS along ``cfg.grid``.

    For a :class:`TabularEnvironment` the logging policy is the environment's
    table (``logging_policy`` is ignored), ``target_policy`` is a table or
    ``None`` for the environment's own, and the truth is exact. For a
    :class:`GaussianFeatureEnv` the truth is a Monte Carlo value drawn from a
    dedicated stream.
    """
    if not isinstance(seed, Seed):
        seed = Seed(int(seed))
    if isinstance(env, TabularEnvironment):
        target_policy = env.resolve_target(target_policy)
        truth, truth_se = exact_true_reward(env, target_policy), 0.0
    else:
        if logging_policy is None or target_policy is None:
            raise ConfigError("feature environments need both a logging and a target policy")
        env.check_policy(logging_policy)
        env.check_policy(target_policy)
        truth, truth_se = true_reward_mc(
            env, target_policy, cfg.true_reward_samples, seed.stream(TRUTH_STREAM)
        )
    logger.info("true reward %.6f (se %.2e)", truth, truth_se)

    def job(k):
        return _one_repetition(env, logging_policy, target_policy, cfg, seed, k)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(job, range(cfg.repetitions)))
    else:
        rows = [job(k) for k in range(cfg.repetitions)]

    estimates = {name: np.stack([r[0][name] for r in rows]) for name in ESTIMATORS}
    logging_means = np.array([r[1] for r in rows])
    stats = {}
    for name in ESTIMATORS:
        per_point = []
        for j in range(len(cfg.grid)):
            col = estimates[name][:, j]
            bias_sq, variance, mse = decompose_error(col, truth)
            per_point.append(
                GridPointStats(
                    mean_estimate=_ordered_mean(col),
                    std_error=standard_error(col),
                    bias_sq=bias_sq,
                    variance=variance,
                    mse=mse,
                )
            )
        stats[name] = tuple(per_point)
    return SweepResult(
        grid=cfg.grid,
        stats=stats,
        estimates=estimates,
        logging_means=logging_means,
        true_reward=truth,
        true_reward_se=truth_se,
        seed=seed.master_seed,
        n_rounds=cfg.n_rounds,
        repetitions=cfg.repetitions,
    )
