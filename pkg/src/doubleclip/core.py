"""Logged-data types and the IPS family of point estimators.

All estimators reduce per-record terms ``r_i * w_eff_i`` in record order
(sequential accumulation, no pairwise reduction), so the nesting identities

    dcips(U=1, L=1)          == logging_mean
    dcips(U, L=unbounded)    == cips(U)
    cips(U >= max w)         == ips

hold bit-for-bit. A parallel or tree reduction of the same terms should be
compared against these paths with an absolute tolerance of 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np


class OverlapError(ValueError):
    """Raised when the logging policy gives zero probability to an action the target may play."""


class ConfigError(ValueError):
    """Raised for invalid clipping constants or experiment settings."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LogRecord:
    """One logged interaction ``(x_i, y_i, r_i, pi_0(y_i|x_i))``."""

    context_id: Any
    action: int
    reward: float
    logging_propensity: float
    target_propensity: Optional[float] = None
    features: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    logging_propensities: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.reward >= 0:
            raise ValueError(f"reward must be non-negative, got {self.reward}")
        if not 0 < self.logging_propensity <= 1:
            raise OverlapError(
                f"logging propensity must lie in (0, 1], got {self.logging_propensity}"
            )
        if self.target_propensity is not None and not 0 <= self.target_propensity <= 1:
            raise ValueError(f"target propensity must lie in [0, 1], got {self.target_propensity}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable, column-oriented logged bandit data.

    ``features`` (shape ``(n, num_actions, feature_dim)``) holds the per-round
    feature matrix when the data came from a feature-based environment, so that
    any softmax target policy can be re-evaluated on it. ``logging_propensities``
    (shape ``(n, num_actions)``) holds the full logging distribution per round.
    """

    actions: np.ndarray
    rewards: np.ndarray
    logging_propensity: np.ndarray
    context_ids: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    logging_propensities: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        prop = np.asarray(self.logging_propensity, dtype=np.float64).reshape(-1)
        n = actions.shape[0]
        if rewards.shape[0] != n or prop.shape[0] != n:
            raise ValueError("actions, rewards and logging_propensity must have equal length")
        if np.any(~(rewards >= 0)):
            raise ValueError("rewards must be non-negative")
        if np.any(~(prop > 0)) or np.any(prop > 1):
            raise OverlapError("logging propensities must lie in (0, 1]")
        if np.any(actions < 0):
            raise ValueError("actions must be non-negative indices")
        object.__setattr__(self, "actions", _readonly(actions))
        object.__setattr__(self, "rewards", _readonly(rewards))
        object.__setattr__(self, "logging_propensity", _readonly(prop))

        if self.context_ids is not None:
            ctx = np.asarray(self.context_ids)
            if ctx.shape[0] != n:
                raise ValueError("context_ids length does not match records")
            object.__setattr__(self, "context_ids", _readonly(ctx))
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 3 or feats.shape[0] != n:
                raise ValueError("features must have shape (n, num_actions, feature_dim)")
            if np.any(actions >= feats.shape[1]):
                raise ValueError("action index out of range for stored features")
            object.__setattr__(self, "features", _readonly(feats))
        if self.logging_propensities is not None:
            full = np.asarray(self.logging_propensities, dtype=np.float64)
            if full.ndim != 2 or full.shape[0] != n:
                raise ValueError("logging_propensities must have shape (n, num_actions)")
            if np.any(actions >= full.shape[1]):
                raise ValueError("action index out of range for logging_propensities")
            object.__setattr__(self, "logging_propensities", _readonly(full))

    @property
    def n(self) -> int:
        return int(self.actions.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def num_actions(self) -> Optional[int]:
        if self.logging_propensities is not None:
            return int(self.logging_propensities.shape[1])
        if self.features is not None:
            return int(self.features.shape[1])
        return None

    @property
    def records(self) -> tuple[LogRecord, ...]:
        out = []
        for i in range(self.n):
            out.append(
                LogRecord(
                    context_id=None if self.context_ids is None else self.context_ids[i].item(),
                    action=int(self.actions[i]),
                    reward=float(self.rewards[i]),
                    logging_propensity=float(self.logging_propensity[i]),
                    features=None if self.features is None else self.features[i],
                    logging_propensities=(
                        None if self.logging_propensities is None else self.logging_propensities[i]
                    ),
                )
            )
        return tuple(out)

    @classmethod
    def from_records(cls, records: Iterable[LogRecord]) -> "Dataset":
        records = list(records)
        has_feats = bool(records) and all(r.features is not None for r in records)
        has_full = bool(records) and all(r.logging_propensities is not None for r in records)
        has_ctx = bool(records) and all(r.context_id is not None for r in records)
        return cls(
            actions=np.array([r.action for r in records], dtype=np.int64),
            rewards=np.array([r.reward for r in records], dtype=np.float64),
            logging_propensity=np.array([r.logging_propensity for r in records], dtype=np.float64),
            context_ids=np.array([r.context_id for r in records]) if has_ctx else None,
            features=np.stack([r.features for r in records]) if has_feats else None,
            logging_propensities=(
                np.stack([r.logging_propensities for r in records]) if has_full else None
            ),
        )


@dataclass(frozen=True)
class ClipConfig:
    """Upper constant ``U`` and lower constant ``L``; ``None`` means unbounded.

    Effective weights are ``max(min(w, U), 1/L)``, so an unbounded ``L`` turns
    lower clipping off and an unbounded ``U`` turns upper clipping off.
    ``math.inf`` is accepted on input and normalised to ``None``.
    """

    upper: Optional[float] = None
    lower: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("upper", "lower"):
            value = getattr(self, name)
            if value is None:
                continue
            value = float(value)
            if math.isnan(value):
                raise ConfigError(f"{name} clipping constant is NaN")
            if math.isinf(value) and value > 0:
                object.__setattr__(self, name, None)
                continue
            if value < 1:
                raise ConfigError(f"{name} clipping constant must be >= 1, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def unison(cls, c: float) -> "ClipConfig":
        return cls(upper=c, lower=c)

    @property
    def lower_bound(self) -> float:
        """Smallest effective weight, ``1/L`` (0 when ``L`` is unbounded)."""
        return 0.0 if self.lower is None else 1.0 / self.lower


@dataclass(frozen=True)
class ClipStats:
    clipped_above: int = 0
    clipped_below: int = 0
    unclipped: int = 0


@dataclass(frozen=True)
class Estimate:
    value: float
    n_used: int
    clip_stats: ClipStats

    def __post_init__(self) -> None:
        s = self.clip_stats
        if s.clipped_above + s.clipped_below + s.unclipped != self.n_used:
            raise ValueError("clip_stats do not add up to n_used")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "n_used": self.n_used,
            "clipped_above": self.clip_stats.clipped_above,
            "clipped_below": self.clip_stats.clipped_below,
            "unclipped": self.clip_stats.unclipped,
        }


def importance_weight(target_prop: float, logging_prop: float) -> float:
    """Return the propensity ratio ``target_prop / logging_prop``."""
    if not logging_prop > 0:
        raise OverlapError(f"logging propensity must be positive, got {logging_prop}")
    if logging_prop > 1:
        raise ValueError(f"logging propensity must be <= 1, got {logging_prop}")
    if not 0 <= target_prop <= 1:
        raise ValueError(f"target propensity must lie in [0, 1], got {target_prop}")
    return target_prop / logging_prop


def importance_weights(target_props: Sequence[float], logging_props: Sequence[float]) -> np.ndarray:
    """Vectorised :func:`importance_weight`."""
    target = np.asarray(target_props, dtype=np.float64)
    logging = np.asarray(logging_props, dtype=np.float64)
    if target.shape != logging.shape:
        raise ValueError("target and logging propensities differ in shape")
    if np.any(~(logging > 0)):
        raise OverlapError("logging propensities must be positive")
    if np.any(logging > 1) or np.any(~((target >= 0) & (target <= 1))):
        raise ValueError("propensities must lie in [0, 1]")
    return target / logging


def _check_inputs(dataset: Dataset, weights) -> np.ndarray:
    if dataset.n < 1:
        raise ValueError("cannot estimate from an empty dataset")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != dataset.n:
        raise ValueError(f"got {w.shape[0]} weights for {dataset.n} records")
    if np.any(~(w >= 0)) or np.any(np.isinf(w)):
        raise ValueError("importance weights must be finite and non-negative")
    return w


def _ordered_mean(terms: np.ndarray) -> float:
    # cumsum accumulates strictly left to right, unlike np.sum's pairwise reduction
    return float(np.cumsum(terms)[-1] / terms.shape[0])


def effective_weights(weights, clip: ClipConfig) -> np.ndarray:
    """Apply ``max(min(w, U), 1/L)``; ``w == U`` and ``w == 1/L`` pass through unchanged."""
    w = np.asarray(weights, dtype=np.float64)
    if clip.upper is not None:
        w = np.minimum(w, clip.upper)
    if clip.lower is not None:
        w = np.maximum(w, 1.0 / clip.lower)
    return w


def _clip_stats(w: np.ndarray, clip: ClipConfig) -> ClipStats:
    above = 0 if clip.upper is None else int(np.count_nonzero(w > clip.upper))
    below = 0 if clip.lower is None else int(np.count_nonzero(w < 1.0 / clip.lower))
    return ClipStats(clipped_above=above, clipped_below=below, unclipped=w.shape[0] - above - below)


def ips(dataset: Dataset, weights) -> Estimate:
    """Plain inverse propensity scoring, ``(1/n) sum r_i w_i``."""
    w = _check_inputs(dataset, weights)
    value = _ordered_mean(dataset.rewards * w)
    return Estimate(value, dataset.n, ClipStats(unclipped=dataset.n))


def cips(dataset: Dataset, weights, clip: Union[ClipConfig, float, None]) -> Estimate:
    """Clipped IPS, ``(1/n) sum r_i min(w_i, U)``.

    ``clip`` may be a bare upper constant or a :class:`ClipConfig` whose lower
    constant is unbounded.
    """
    if not isinstance(clip, ClipConfig):
        clip = ClipConfig(upper=clip)
    if clip.lower is not None:
        raise ConfigError("cips takes no lower clipping constant; use dcips")
    return dcips(dataset, weights, clip)


def dcips(dataset: Dataset, weights, clip: ClipConfig) -> Estimate:
    """Double-clipped IPS, ``(1/n) sum r_i max(min(w_i, U), 1/L)``."""
    w = _check_inputs(dataset, weights)
    value = _ordered_mean(dataset.rewards * effective_weights(w, clip))
    return Estimate(value, dataset.n, _clip_stats(w, clip))


def logging_mean(dataset: Dataset) -> Estimate:
    """Average logged reward: the value dcips collapses to at ``U = L = 1``."""
    if dataset.n < 1:
        raise ValueError("cannot estimate from an empty dataset")
    return Estimate(_ordered_mean(dataset.rewards), dataset.n, ClipStats(unclipped=dataset.n))
