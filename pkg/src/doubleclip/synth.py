"""Policies, environments and logged-data simulation.

Two environments are provided:

* :class:`GaussianFeatureEnv` -- every round draws a fresh feature matrix
  ``Phi`` whose row ``j`` is ``one_hot(j) + sigma * N(0, I)``; linear softmax
  policies act on ``Phi @ beta`` and the reward of action ``j`` is
  ``1{phi_j . beta_reward > 0}``.
* :class:`TabularEnvironment` -- finitely many contexts and actions with known
  probabilities and conditional mean rewards, used by the exact oracle.

Randomness comes from :class:`Seed`, which maps ``(master_seed, stream_id)``
to a counter-based Philox generator, so repetition ``k`` of an experiment can
be regenerated on its own and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from doubleclip.core import ConfigError, Dataset, OverlapError

PROB_ATOL = 1e-12

DEFAULT_REWARD_WEIGHTS = (0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Seed:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if int(self.stream_id) < 0:
            raise ValueError("stream_id must be non-negative")

    def rng(self) -> np.random.Generator:
        seq = np.random.SeedSequence([int(self.master_seed), int(self.stream_id)])
        return np.random.Generator(np.random.Philox(seq))

    def stream(self, stream_id: int) -> "Seed":
        return Seed(self.master_seed, stream_id)


SeedLike = Union[Seed, np.random.Generator]


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return seed.rng()


@dataclass(frozen=True, eq=False)
class LinearSoftmaxPolicy:
    """Softmax over linear scores ``Phi @ weights``."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("policy weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def flipped(self) -> "LinearSoftmaxPolicy":
        return LinearSoftmaxPolicy(self.weights[::-1].copy())

    def propensities(self, features) -> np.ndarray:
        return softmax_propensities(self, features)


def default_logging_policy(num_actions: int = 8) -> LinearSoftmaxPolicy:
    """Weights ``[1, 2, ..., A] / (A + 1)``: favours the highest-index actions."""
    return LinearSoftmaxPolicy(np.arange(1, num_actions + 1) / (num_actions + 1))


def default_target_policy(num_actions: int = 8) -> LinearSoftmaxPolicy:
    """The logging weights reversed: favours the lowest-index actions."""
    return default_logging_policy(num_actions).flipped()


def softmax_propensities(policy: LinearSoftmaxPolicy, features) -> np.ndarray:
    """Action probabilities for one feature matrix ``(A, d)`` or a batch ``(..., A, d)``.

    Scores are max-subtracted before exponentiation, so any finite scores give
    finite output. Entries are strictly positive unless two scores differ by
    more than the float64 exponent range (about 745).
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim < 2 or feats.shape[-1] != policy.dim:
        raise ValueError(
            f"feature matrix of shape {feats.shape} does not match policy dimension {policy.dim}"
        )
    scores = feats @ policy.weights
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite policy scores")
    scores = scores - scores.max(axis=-1, keepdims=True)
    expo = np.exp(scores)
    return expo / expo.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class GaussianFeatureEnv:
    num_actions: int = 8
    sigma: float = 1.0
    reward_weights: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_REWARD_WEIGHTS))

    def __post_init__(self) -> None:
        if int(self.num_actions) < 2:
            raise ConfigError("need at least two actions")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        rw = np.array(self.reward_weights, dtype=np.float64).reshape(-1)
        if rw.shape[0] != self.num_actions:
            raise ConfigError(
                f"reward_weights has length {rw.shape[0]}, expected {self.num_actions}"
            )
        rw.flags.writeable = False
        object.__setattr__(self, "num_actions", int(self.num_actions))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "reward_weights", rw)

    @property
    def feature_dim(self) -> int:
        return self.num_actions

    def draw_features(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (self.num_actions, self.feature_dim)
        if size is not None:
            shape = (size,) + shape
        noise = rng.standard_normal(shape)
        return np.eye(self.num_actions) + self.sigma * noise

    def check_policy(self, policy: LinearSoftmaxPolicy) -> None:
        if policy.dim != self.feature_dim:
            raise ValueError(
                f"policy dimension {policy.dim} does not match feature dimension {self.feature_dim}"
            )


def sample_features(env: GaussianFeatureEnv, seed: SeedLike) -> np.ndarray:
    """Draw one feature matrix; row ``j`` is ``Normal(one_hot(j), sigma^2 I)``."""
    return env.draw_features(_as_rng(seed))


def realize_reward(features_row, reward_weights) -> int:
    """1 if ``features_row . reward_weights`` is strictly positive, else 0."""
    row = np.asarray(features_row, dtype=np.float64)
    rw = np.asarray(reward_weights, dtype=np.float64)
    if row.shape != rw.shape:
        raise ValueError("feature row and reward weights differ in shape")
    return int(float(row @ rw) > 0)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse CDF per row; scaling u by the row total keeps zero-mass tail actions unreachable
    cdf = np.cumsum(probs, axis=1)
    target = u * cdf[:, -1]
    return np.count_nonzero(cdf <= target[:, None], axis=1)


def simulate(
    env: GaussianFeatureEnv, logging_policy: LinearSoftmaxPolicy, n: int, seed: SeedLike
) -> Dataset:
    """Log ``n`` rounds of ``logging_policy`` acting in ``env``.

    Each round draws a fresh feature matrix, samples an action from the
    softmax over its scores and realises the reward of that action. The
    feature matrices and full logging distributions are stored on the dataset.
    """
    if int(n) < 1:
        raise ConfigError(f"number of rounds must be >= 1, got {n}")
    env.check_policy(logging_policy)
    rng = _as_rng(seed)
    feats = env.draw_features(rng, size=int(n))
    probs = softmax_propensities(logging_policy, feats)
    actions = _sample_rows(probs, rng.random(int(n)))
    rows = np.arange(int(n))
    chosen = feats[rows, actions]
    rewards = (chosen @ env.reward_weights > 0).astype(np.float64)
    return Dataset(
        actions=actions,
        rewards=rewards,
        logging_propensity=probs[rows, actions],
        context_ids=rows,
        features=feats,
        logging_propensities=probs,
    )


@dataclass(frozen=True, eq=False)
class TabularEnvironment:
    """Finite contexts and actions with exact probabilities.

    ``logging_table[x, y]`` is the logging propensity of action ``y`` in
    context ``x``, ``target_table`` the same for the target policy and
    ``expected_rewards[x, y]`` the conditional mean reward.
    """

    context_probs: np.ndarray
    logging_table: np.ndarray
    expected_rewards: np.ndarray
    target_table: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        ctx = np.array(self.context_probs, dtype=np.float64).reshape(-1)
        logging = np.array(self.logging_table, dtype=np.float64)
        rewards = np.array(self.expected_rewards, dtype=np.float64)
        if logging.ndim != 2 or logging.shape[0] != ctx.shape[0]:
            raise ConfigError("logging_table must have shape (num_contexts, num_actions)")
        if rewards.shape != logging.shape:
            raise ConfigError("expected_rewards must match logging_table in shape")
        _check_distribution(ctx, "context_probs")
        _check_distribution(logging, "logging_table")
        if np.any(~(rewards >= 0)) or not np.all(np.isfinite(rewards)):
            raise ConfigError("expected rewards must be finite and non-negative")
        for name, arr in (("context_probs", ctx), ("logging_table", logging), ("expected_rewards", rewards)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.target_table is not None:
            object.__setattr__(self, "target_table", self.check_target(self.target_table))

    @property
    def num_contexts(self) -> int:
        return int(self.context_probs.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.logging_table.shape[1])

    def check_target(self, target) -> np.ndarray:
        """Validate a target table against this environment and return it read-only."""
        table = np.array(target, dtype=np.float64)
        if table.shape != self.logging_table.shape:
            raise ConfigError("target table must match logging_table in shape")
        _check_distribution(table, "target_table")
        if np.any((table > 0) & (self.logging_table <= 0)):
            raise OverlapError("target policy plays an action the logging policy never plays")
        table.flags.writeable = False
        return table

    def resolve_target(self, target=None) -> np.ndarray:
        if target is None:
            if self.target_table is None:
                raise ConfigError("no target table given and the environment has none")
            return self.target_table
        if isinstance(target, np.ndarray) and target is self.target_table:
            return target
        return self.check_target(target)

    def with_target(self, target) -> "TabularEnvironment":
        return TabularEnvironment(self.context_probs, self.logging_table, self.expected_rewards, target)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(~(p >= 0)):
        raise ConfigError(f"{name} has negative or NaN entries")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_ATOL):
        raise ConfigError(f"{name} rows must sum to 1 within {PROB_ATOL}")


def random_tabular_env(
    rng: np.random.Generator, max_contexts: int = 5, max_actions: int = 8, spread: float = 2.0
) -> TabularEnvironment:
    """A random full-support environment with rewards in ``[0, 1]``.

    Policies are softmaxes of ``spread``-scaled Gaussian scores, which gives
    importance weights over a few orders of magnitude. Rows are renormalised
    so they sum to one within the validation tolerance.
    """
    n_ctx = int(rng.integers(1, max_contexts + 1))
    n_act = int(rng.integers(2, max_actions + 1))

    def _softmax_rows(shape):
        s = spread * rng.standard_normal(shape)
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    ctx = rng.dirichlet(np.ones(n_ctx))
    logging = _softmax_rows((n_ctx, n_act))
    target = _softmax_rows((n_ctx, n_act))
    rewards = rng.random((n_ctx, n_act))
    return TabularEnvironment(ctx, logging, rewards, target)


def tabular_simulate(env: TabularEnvironment, n: int, seed: SeedLike) -> Dataset:
    """Sample ``n`` logged rounds; rewards are Bernoulli with the cell's mean."""
    if int(n) < 1:
        raise ConfigError(f"number of rounds must be >= 1, got {n}")
    if np.any(env.expected_rewards > 1):
        raise ConfigError("Bernoulli rewards need expected rewards in [0, 1]")
    rng = _as_rng(seed)
    n = int(n)
    ctx_cdf = np.broadcast_to(env.context_probs, (n, env.num_contexts))
    contexts = _sample_rows(ctx_cdf, rng.random(n))
    probs = env.logging_table[contexts]
    actions = _sample_rows(probs, rng.random(n))
    means = env.expected_rewards[contexts, actions]
    rewards = (rng.random(n) < means).astype(np.float64)
    return Dataset(
        actions=actions,
        rewards=rewards,
        logging_propensity=probs[np.arange(n), actions],
        context_ids=contexts,
        logging_propensities=probs,
    )


def evaluate_target_propensities(dataset: Dataset, target_policy) -> np.ndarray:
    """Target propensity of each logged action.

    ``target_policy`` is either a :class:`LinearSoftmaxPolicy`, evaluated on the
    stored feature matrices, or a ``(num_contexts, num_actions)`` table indexed
    by the stored context ids.
    """
    rows = np.arange(dataset.n)
    if isinstance(target_policy, LinearSoftmaxPolicy):
        if dataset.features is None:
            raise ValueError("dataset has no stored feature matrices")
        return softmax_propensities(target_policy, dataset.features)[rows, dataset.actions]
    table = np.asarray(target_policy, dtype=np.float64)
    if table.ndim != 2:
        raise ValueError("tabular target policy must be a 2-d table")
    if dataset.context_ids is None:
        raise ValueError("dataset has no context ids to index the target table")
    ctx = np.asarray(dataset.context_ids, dtype=np.int64)
    if np.any(ctx < 0) or np.any(ctx >= table.shape[0]) or np.any(dataset.actions >= table.shape[1]):
        raise ValueError("dataset references contexts or actions outside the target table")
    return table[ctx, dataset.actions]


def true_reward_mc(
    env: GaussianFeatureEnv,
    policy: LinearSoftmaxPolicy,
    num_samples: int,
    seed: SeedLike,
    chunk_size: int = 100_000,
) -> tuple[float, float]:
    """Monte Carlo value of ``policy`` and the standard error of that mean.

    Each sample draws one feature matrix and averages the realised rewards of
    all actions under the policy's propensities for the same matrix.
    """
    if int(num_samples) < 1:
        raise ValueError("num_samples must be >= 1")
    env.check_policy(policy)
    rng = _as_rng(seed)
    values = []
    remaining = int(num_samples)
    while remaining > 0:
        size = min(chunk_size, remaining)
        feats = env.draw_features(rng, size=size)
        probs = softmax_propensities(policy, feats)
        fired = (feats @ env.reward_weights > 0).astype(np.float64)
        values.append(np.einsum("ij,ij->i", probs, fired))
        remaining -= size
    v = np.concatenate(values)
    if v.shape[0] < 2:
        return float(v[0]), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.shape[0]))
