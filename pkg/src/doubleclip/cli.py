"""Command-line entry points: ``simulate``, ``estimate``, ``sweep`` and ``oracle``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from doubleclip.core import ConfigError, cips, dcips, importance_weights, ips
from doubleclip.harness import ESTIMATORS, run_sweep
from doubleclip.io import (
    RunConfig,
    load_config,
    read_dataset,
    sweep_to_csv,
    write_dataset,
)
from doubleclip.oracle import (
    bias_dcips_exact,
    exact_expected_estimate,
    exact_true_reward,
)
from doubleclip.synth import Seed, evaluate_target_propensities, simulate, tabular_simulate


def _output_path(args, cfg: RunConfig, key: str) -> Optional[Path]:
    if args.out:
        return Path(args.out)
    if cfg.outputs.get(key):
        return Path(cfg.outputs[key])
    return None


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.n_rounds is None:
        raise ConfigError("config needs n_rounds to simulate")
    out = _output_path(args, cfg, "dataset")
    if out is None:
        raise ConfigError("no output path: pass --out or set output.dataset")
    seed = Seed(cfg.seed)
    if cfg.is_tabular:
        data = tabular_simulate(cfg.environment, cfg.n_rounds, seed)
    else:
        data = simulate(cfg.environment, cfg.logging_policy, cfg.n_rounds, seed)
    write_dataset(data, out)
    print(f"n={data.n} seed={cfg.seed} -> {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.estimator is None:
        raise ConfigError("config has no estimator block")
    if cfg.target_policy is None:
        raise ConfigError("estimation needs a target policy")
    data = read_dataset(args.dataset)
    w = importance_weights(evaluate_target_propensities(data, cfg.target_policy), data.logging_propensity)
    spec = cfg.estimator
    if spec.name == "ips":
        est = ips(data, w)
    elif spec.name == "cips":
        est = cips(data, w, spec.clip)
    else:
        est = dcips(data, w, spec.clip)
    s = est.clip_stats
    print(f"estimator={spec.name} U={spec.clip.upper} L={spec.clip.lower}")
    print(f"value={est.value!r}")
    print(f"n_used={est.n_used} clipped_above={s.clipped_above} clipped_below={s.clipped_below} unclipped={s.unclipped}")
    out = args.out or cfg.outputs.get("estimate")
    if out:
        payload = {"estimator": spec.name, "upper": spec.clip.upper, "lower": spec.clip.lower}
        payload.update(est.to_dict())
        Path(out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.sweep is None:
        raise ConfigError("config has no sweep block")
    out = _output_path(args, cfg, "sweep")
    if out is None:
        raise ConfigError("no output path: pass --out or set output.sweep")
    result = run_sweep(
        cfg.environment, cfg.logging_policy, cfg.target_policy, cfg.sweep, Seed(cfg.seed),
        max_workers=args.workers,
    )
    Path(out).write_text(sweep_to_csv(result), encoding="utf-8")
    print(f"true_reward={result.true_reward:.6f} (se {result.true_reward_se:.2e}) -> {out}")
    for name in ESTIMATORS:
        clip, s = result.best_point(name)
        print(f"{name}: min mse {s.mse:.6g} at U={clip.upper} L={clip.lower if name == 'dcips' else None}")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config, args.seed)
    if not cfg.is_tabular:
        raise ConfigError("the exact oracle supports tabular environments only")
    if cfg.estimator is None:
        raise ConfigError("config has no estimator block")
    env, target, clip = cfg.environment, cfg.target_policy, cfg.estimator.clip
    expected = exact_expected_estimate(env, target, clip)
    truth = exact_true_reward(env, target)
    report = bias_dcips_exact(env, target, clip)
    residual = abs(expected - truth - report.bias_total)
    print(f"U={clip.upper} L={clip.lower}")
    print(f"bias_total={report.bias_total!r}")
    print(f"upper_term={report.upper_term!r}")
    print(f"lower_term={report.lower_term!r}")
    print(f"expected_estimate={expected!r}")
    print(f"true_reward={truth!r}")
    print(f"residual={residual!r}")
    out = args.out or cfg.outputs.get("oracle")
    if out:
        Path(out).write_text(report.to_csv(), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doubleclip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        if dataset:
            p.add_argument("--dataset", required=True, help="logged data, JSON lines")
        p.add_argument("--out", help="output path (overrides the config)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")

    p = sub.add_parser("simulate", help="log a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the target policy value from a dataset")
    common(p, dataset=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="run the clipping-constant sweep and write CSV")
    common(p)
    p.add_argument("--workers", type=int, default=None, help="threads for repetitions")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact bias report on a tabular environment")
    common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
