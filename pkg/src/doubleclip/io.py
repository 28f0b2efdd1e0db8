"""Run configuration, dataset (JSON lines) and sweep result (CSV) formats.

Config files are JSON objects::

    {
      "seed": 20230919,
      "environment": {"type": "gaussian", "num_actions": 8, "sigma": 1.0,
                      "reward_weights": [0, 0.5, 0, 0.5, 0, 0, 0, 0]},
      "logging_policy": {"weights": [...]},      # optional for gaussian
      "target_policy": {"weights": [...]},       # or {"table": [[...]]} for tabular
      "n_rounds": 300,
      "estimator": {"name": "dcips", "upper": 2.0, "lower": null},
      "sweep": {"repetitions": 100, "mode": "unison",
                "grid": {"points": 25, "low": 1, "high": 100},
                "true_reward_samples": 1000000},
      "output": {"dataset": "logged.jsonl", "sweep": "sweep.csv"}
    }

A tabular environment replaces the gaussian block with ``context_probs``,
``logging_table``, ``expected_rewards`` and optionally ``target_table``.
Clipping constants may be ``null``, ``"inf"`` or omitted for "unbounded".

Dataset lines carry their own ``schema_version`` so every line is
self-describing and a file of ``n`` records has exactly ``n`` lines.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from doubleclip.core import ClipConfig, ConfigError, Dataset
from doubleclip.harness import ESTIMATORS, SweepConfig, SweepResult, default_grid
from doubleclip.synth import (
    GaussianFeatureEnv,
    LinearSoftmaxPolicy,
    TabularEnvironment,
    default_logging_policy,
    default_target_policy,
)

SCHEMA_VERSION = 1
SWEEP_COLUMNS = ("U", "L", "estimator", "mean", "std_error", "bias_sq", "variance", "mse")
ESTIMATOR_NAMES = ("ips", "cips", "dcips")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    clip: ClipConfig = field(default_factory=ClipConfig)


@dataclass(frozen=True, eq=False)
class RunConfig:
    environment: Union[GaussianFeatureEnv, TabularEnvironment]
    logging_policy: Optional[LinearSoftmaxPolicy]
    target_policy: Any  # LinearSoftmaxPolicy, tabular target table, or None
    seed: int
    n_rounds: Optional[int] = None
    estimator: Optional[EstimatorSpec] = None
    sweep: Optional[SweepConfig] = None
    outputs: dict = field(default_factory=dict)

    @property
    def is_tabular(self) -> bool:
        return isinstance(self.environment, TabularEnvironment)


def _clip_constant(value) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "+inf", "infinity", "unbounded"):
            return None
        raise ConfigError(f"cannot read clipping constant {value!r}")
    value = float(value)
    return None if math.isinf(value) and value > 0 else value


def _parse_environment(spec: dict):
    kind = spec.get("type", "gaussian")
    if kind == "gaussian":
        num_actions = int(spec.get("num_actions", 8))
        kwargs = {"num_actions": num_actions, "sigma": float(spec.get("sigma", 1.0))}
        if "reward_weights" in spec:
            kwargs["reward_weights"] = spec["reward_weights"]
        return GaussianFeatureEnv(**kwargs)
    if kind == "tabular":
        try:
            return TabularEnvironment(
                context_probs=spec["context_probs"],
                logging_table=spec["logging_table"],
                expected_rewards=spec["expected_rewards"],
                target_table=spec.get("target_table"),
            )
        except KeyError as exc:
            raise ConfigError(f"tabular environment is missing {exc.args[0]!r}") from None
    raise ConfigError(f"unknown environment type {kind!r}")


def _parse_policy(spec, env, default):
    if isinstance(env, TabularEnvironment):
        if spec is None:
            return env.target_table
        if "table" not in spec:
            raise ConfigError("tabular policies are given as {'table': [[...]]}")
        return env.check_target(spec["table"])
    if spec is None or spec == "default":
        return default(env.num_actions)
    if "weights" not in spec:
        raise ConfigError("linear policies are given as {'weights': [...]}")
    policy = LinearSoftmaxPolicy(spec["weights"])
    env.check_policy(policy)
    return policy


def _parse_sweep(spec: dict, n_rounds: Optional[int]) -> SweepConfig:
    mode = spec.get("mode", "unison")
    if "pairs" in spec:
        grid = tuple(
            ClipConfig(upper=_clip_constant(u), lower=_clip_constant(l)) for u, l in spec["pairs"]
        )
        mode = spec.get("mode", "explicit")
    else:
        g = spec.get("grid", {})
        grid = default_grid(int(g.get("points", 25)), float(g.get("low", 1.0)), float(g.get("high", 100.0)))
    return SweepConfig(
        grid=grid,
        n_rounds=int(spec.get("n_rounds", n_rounds if n_rounds is not None else 300)),
        repetitions=int(spec.get("repetitions", 100)),
        mode=mode,
        true_reward_samples=int(spec.get("true_reward_samples", 1_000_000)),
    )


def parse_config(raw: dict, seed_override: Optional[int] = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    env = _parse_environment(raw.get("environment", {"type": "gaussian"}))
    if isinstance(env, TabularEnvironment):
        logging_policy = None
    else:
        logging_policy = _parse_policy(raw.get("logging_policy"), env, default_logging_policy)
    target = _parse_policy(raw.get("target_policy"), env, default_target_policy)

    estimator = None
    if "estimator" in raw:
        e = raw["estimator"]
        name = str(e.get("name", "dcips")).lower()
        if name not in ESTIMATOR_NAMES:
            raise ConfigError(f"unknown estimator {name!r}")
        upper = _clip_constant(e.get("upper"))
        lower = _clip_constant(e.get("lower"))
        if name == "ips" and (upper is not None or lower is not None):
            raise ConfigError("ips takes no clipping constants")
        if name == "cips" and lower is not None:
            raise ConfigError("cips takes no lower clipping constant")
        estimator = EstimatorSpec(name, ClipConfig(upper=upper, lower=lower))

    n_rounds = raw.get("n_rounds")
    if n_rounds is not None:
        n_rounds = int(n_rounds)
        if n_rounds < 1:
            raise ConfigError(f"n_rounds must be >= 1, got {n_rounds}")
    sweep = _parse_sweep(raw["sweep"], n_rounds) if "sweep" in raw else None

    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    return RunConfig(
        environment=env,
        logging_policy=logging_policy,
        target_policy=target,
        seed=int(seed),
        n_rounds=n_rounds,
        estimator=estimator,
        sweep=sweep,
        outputs=dict(raw.get("output", {})),
    )


def load_config(path, seed_override: Optional[int] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, seed_override)


def _record_dict(data: Dataset, i: int) -> dict:
    rec = {"schema_version": SCHEMA_VERSION}
    if data.context_ids is not None:
        rec["context_id"] = data.context_ids[i].item()
    if data.features is not None:
        rec["features"] = data.features[i].tolist()
    rec["action"] = int(data.actions[i])
    rec["reward"] = float(data.rewards[i])
    if data.logging_propensities is not None:
        rec["logging_propensities"] = data.logging_propensities[i].tolist()
    else:
        rec["logging_propensity"] = float(data.logging_propensity[i])
    return rec


def dumps_dataset(data: Dataset) -> str:
    # json uses repr for floats: shortest text that round-trips exactly
    lines = [json.dumps(_record_dict(data, i), separators=(",", ":")) for i in range(data.n)]
    return "".join(line + "\n" for line in lines)


def write_dataset(data: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(data), encoding="utf-8")


def loads_dataset(text: str) -> Dataset:
    actions, rewards, props, ctx, feats, full = [], [], [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("record is not a JSON object")
            version = rec.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema_version {version}")
            action = int(rec["action"])
            actions.append(action)
            rewards.append(float(rec["reward"]))
            if "logging_propensities" in rec:
                vec = [float(p) for p in rec["logging_propensities"]]
                if not 0 <= action < len(vec):
                    raise ValueError(f"action {action} outside logging_propensities")
                full.append(vec)
                props.append(vec[action])
            else:
                props.append(float(rec["logging_propensity"]))
            if not rewards[-1] >= 0:
                raise ValueError(f"reward must be non-negative, got {rewards[-1]}")
            if not 0 < props[-1] <= 1:
                raise ValueError(f"logging propensity of the chosen action must lie in (0, 1], got {props[-1]}")
            if "features" in rec:
                feats.append(rec["features"])
            if "context_id" in rec:
                ctx.append(rec["context_id"])
        except (KeyError, TypeError, ValueError) as exc:
            detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise DatasetFormatError(f"line {lineno}: {detail}") from None
    n = len(actions)
    for name, col in (("features", feats), ("logging_propensities", full), ("context_id", ctx)):
        if col and len(col) != n:
            raise DatasetFormatError(f"field {name!r} present on some records but not all")
    try:
        return Dataset(
            actions=np.array(actions, dtype=np.int64),
            rewards=np.array(rewards, dtype=np.float64),
            logging_propensity=np.array(props, dtype=np.float64),
            context_ids=np.array(ctx) if ctx else None,
            features=np.array(feats, dtype=np.float64) if feats else None,
            logging_propensities=np.array(full, dtype=np.float64) if full else None,
        )
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None


def read_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def _fmt_constant(c: Optional[float]) -> str:
    return "inf" if c is None else repr(float(c))


def sweep_to_csv(result: SweepResult) -> str:
    """Metadata lines prefixed ``#`` followed by one row per grid point and estimator."""
    buf = io.StringIO()
    meta = [
        ("schema_version", SCHEMA_VERSION),
        ("seed", result.seed),
        ("n", result.n_rounds),
        ("repetitions", result.repetitions),
        ("true_reward", repr(result.true_reward)),
        ("true_reward_se", repr(result.true_reward_se)),
        ("logging_mean_of_means", repr(result.logging_mean_of_means)),
        ("variance_convention", "population (divisor K); mse = bias_sq + variance"),
        ("std_error_convention", "sample sd (divisor K-1) / sqrt(K)"),
    ]
    for key, value in meta:
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for j, clip in enumerate(result.grid):
        for name in ESTIMATORS:
            s = result.stats[name][j]
            lower = clip.lower if name == "dcips" else None
            writer.writerow(
                [
                    _fmt_constant(clip.upper),
                    _fmt_constant(lower),
                    name,
                    repr(s.mean_estimate),
                    repr(s.std_error),
                    repr(s.bias_sq),
                    repr(s.variance),
                    repr(s.mse),
                ]
            )
    return buf.getvalue()


def read_sweep_csv(path) -> tuple[dict, list[dict]]:
    """Parse a sweep CSV back into its metadata and rows (numbers as floats)."""
    meta, body = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        else:
            body.append(line)
    rows = []
    for row in csv.DictReader(body):
        rows.append({k: (v if k == "estimator" else float(v)) for k, v in row.items()})
    return meta, rows
