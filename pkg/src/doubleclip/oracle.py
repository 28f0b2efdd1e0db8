"""Exact expectations and clipping bias on tabular environments.

Everything here enumerates ``(context, action)`` cells, so results are exact
up to floating-point rounding of a few dozen products and sums; agreement
between independent routes is checked at 1e-12.

Bias is ``E[estimate] - R(target)``. For double clipping it splits into an
upper term (records with ``w > U``, never positive) and a lower term (records
with ``w < 1/L``, never negative).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from doubleclip.core import ClipConfig, ConfigError, effective_weights
from doubleclip.synth import TabularEnvironment

EXACT_ATOL = 1e-12


def _as_clip(clip) -> ClipConfig:
    if clip is None:
        return ClipConfig()
    if isinstance(clip, ClipConfig):
        return clip
    return ClipConfig(upper=clip)


def weight_table(env: TabularEnvironment, target=None) -> np.ndarray:
    """``target / logging`` per cell; cells the logging policy never plays get 0."""
    target = env.resolve_target(target)
    logging = env.logging_table
    out = np.zeros_like(logging)
    np.divide(target, logging, out=out, where=logging > 0)
    return out


def exact_true_reward(env: TabularEnvironment, target=None) -> float:
    """``sum_x P(x) sum_y target(y|x) E[r|x,y]``."""
    target = env.resolve_target(target)
    return float(np.sum(env.context_probs[:, None] * target * env.expected_rewards))


def exact_logging_reward(env: TabularEnvironment) -> float:
    return float(np.sum(env.context_probs[:, None] * env.logging_table * env.expected_rewards))


def exact_expected_estimate(env: TabularEnvironment, target=None, clip=None) -> float:
    """Expectation of a single-record (d)cIPS estimate under the logging policy.

    By linearity this is also the expectation of the ``n``-record average.
    ``clip=None`` gives plain IPS.
    """
    clip = _as_clip(clip)
    w = weight_table(env, target)
    eff = effective_weights(w, clip)
    cell = env.context_probs[:, None] * env.logging_table * eff * env.expected_rewards
    return float(np.sum(cell))


@dataclass(frozen=True)
class BiasReport:
    bias_total: float
    upper_term: float
    lower_term: float
    per_cell: Optional[np.ndarray] = None  # (num_contexts, num_actions, 2): upper, lower

    def csv_rows(self) -> list[tuple[int, int, float, float]]:
        if self.per_cell is None:
            return []
        rows = []
        for x in range(self.per_cell.shape[0]):
            for y in range(self.per_cell.shape[1]):
                rows.append((x, y, float(self.per_cell[x, y, 0]), float(self.per_cell[x, y, 1])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["context", "action", "upper_contribution", "lower_contribution"])
        for x, y, up, lo in self.csv_rows():
            writer.writerow([x, y, repr(up), repr(lo)])
        return buf.getvalue()


def bias_dcips_exact(env: TabularEnvironment, target=None, clip=None) -> BiasReport:
    """Closed-form bias of double clipping, enumerated under the target policy.

    Each cell contributes ``P(x) target(y|x) E[r|x,y]`` times
    ``1{w > U} (U/w - 1)`` (upper) and ``1{w < 1/L} (1/(wL) - 1)`` (lower).
    The formula assumes ``w > 0`` wherever the logging policy acts; a target
    that zeroes such a cell is rejected when lower clipping is active.
    """
    clip = _as_clip(clip)
    target = env.resolve_target(target)
    w = weight_table(env, target)
    mass = env.context_probs[:, None] * target * env.expected_rewards
    safe_w = np.where(w > 0, w, 1.0)

    upper = np.zeros_like(w)
    if clip.upper is not None:
        hit = w > clip.upper
        upper[hit] = mass[hit] * (clip.upper / safe_w[hit] - 1.0)

    lower = np.zeros_like(w)
    if clip.lower is not None:
        played = env.logging_table > 0
        if np.any(played & (w <= 0)):
            raise ConfigError("lower-clipping bias needs a positive weight on every logged cell")
        hit = played & (w < 1.0 / clip.lower)
        lower[hit] = mass[hit] * (1.0 / (safe_w[hit] * clip.lower) - 1.0)

    up, lo = float(np.sum(upper)), float(np.sum(lower))
    return BiasReport(
        bias_total=up + lo,
        upper_term=up,
        lower_term=lo,
        per_cell=np.stack([upper, lower], axis=-1),
    )


def bias_cips_exact(env: TabularEnvironment, target=None, upper=None) -> BiasReport:
    """Bias of upper-only clipping; the lower term is identically zero."""
    if isinstance(upper, ClipConfig):
        if upper.lower is not None:
            raise ConfigError("bias_cips_exact takes no lower clipping constant")
        clip = upper
    else:
        clip = ClipConfig(upper=upper)
    return bias_dcips_exact(env, target, clip)


def check_is_identity(env: TabularEnvironment, target, test_fn) -> tuple[float, float, float]:
    """Both sides of ``E_{y~logging}[f w] = E_{y~target}[f]``.

    ``test_fn`` is a ``(num_contexts, num_actions)`` table of ``f(x, y)``.
    """
    target = env.resolve_target(target)
    f = np.asarray(test_fn, dtype=np.float64)
    if f.shape != env.logging_table.shape:
        raise ValueError("test function table must match the environment's shape")
    w = weight_table(env, target)
    px = env.context_probs[:, None]
    lhs = float(np.sum(px * env.logging_table * f * w))
    rhs = float(np.sum(px * target * f))
    return lhs, rhs, abs(lhs - rhs)


def check_clip_decomposition(w: float, upper: Optional[float], lower: Optional[float]) -> bool:
    """Compare ``max(min(w, U), 1/L)`` with its piecewise form.

    The piecewise form is ``U`` above ``U``, ``1/L`` below ``1/L`` and ``w``
    otherwise, with both boundary points kept as ``w``.
    """
    clip = ClipConfig(upper=upper, lower=lower)
    hi = np.inf if clip.upper is None else clip.upper
    lo = clip.lower_bound
    if w > hi:
        piecewise = hi
    elif w < lo:
        piecewise = lo
    else:
        piecewise = w
    return float(effective_weights(w, clip)) == float(piecewise)
