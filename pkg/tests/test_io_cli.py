import json
import math
from pathlib import Path

import numpy as np
import pytest

from doubleclip.cli import main
from doubleclip.core import ConfigError, ClipConfig
from doubleclip.io import (
    SWEEP_COLUMNS,
    DatasetFormatError,
    dumps_dataset,
    load_config,
    loads_dataset,
    parse_config,
    read_dataset,
    read_sweep_csv,
)
from doubleclip.synth import GaussianFeatureEnv, Seed, TabularEnvironment, default_logging_policy, simulate, tabular_simulate

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

WORKED_ENV = {
    "type": "tabular",
    "context_probs": [1.0],
    "logging_table": [[0.9, 0.1]],
    "expected_rewards": [[1.0, 1.0]],
    "target_table": [[0.5, 0.5]],
}


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


def parse_output(text):
    out = {}
    for token in text.split():
        if "=" in token:
            k, v = token.split("=", 1)
            out[k] = v
    return out


def gaussian_config(**extra):
    raw = {"seed": 5, "environment": {"type": "gaussian"}, "n_rounds": 300}
    raw.update(extra)
    return raw


class TestConfig:
    def test_shipped_configs_parse(self):
        g = load_config(CONFIG_DIR / "gaussian.json")
        assert isinstance(g.environment, GaussianFeatureEnv)
        np.testing.assert_array_equal(g.logging_policy.weights, default_logging_policy().weights)
        assert g.sweep.repetitions == 100 and len(g.sweep.grid) == 25
        t = load_config(CONFIG_DIR / "tabular_worked.json")
        assert isinstance(t.environment, TabularEnvironment)
        assert t.estimator.clip == ClipConfig(2, None)
        assert t.sweep.grid[2] == ClipConfig(2, None)

    def test_seed_override(self):
        assert parse_config(gaussian_config(), seed_override=11).seed == 11

    @pytest.mark.parametrize(
        "extra",
        [
            {"estimator": {"name": "snips"}},
            {"estimator": {"name": "cips", "upper": 2, "lower": 3}},
            {"estimator": {"name": "ips", "upper": 2}},
            {"estimator": {"name": "dcips", "upper": 0.5}},
            {"n_rounds": 0},
            {"sweep": {"repetitions": 1}},
            {"environment": {"type": "continuous"}},
            {"target_policy": {"weights": [1, 2]}},
        ],
    )
    def test_invalid(self, extra):
        with pytest.raises(ValueError):
            parse_config(gaussian_config(**extra))

    def test_unbounded_spellings(self):
        for value in (None, "inf", "Infinity", math.inf):
            cfg = parse_config(gaussian_config(estimator={"name": "dcips", "upper": value, "lower": value}))
            assert cfg.estimator.clip == ClipConfig()


class TestDatasetFormat:
    def test_gaussian_round_trip_is_exact(self):
        data = simulate(GaussianFeatureEnv(), default_logging_policy(), 40, Seed(3))
        back = loads_dataset(dumps_dataset(data))
        for field in ("actions", "rewards", "logging_propensity", "features", "logging_propensities", "context_ids"):
            np.testing.assert_array_equal(getattr(back, field), getattr(data, field))

    def test_tabular_round_trip_is_exact(self):
        env = TabularEnvironment(**{k: v for k, v in WORKED_ENV.items() if k != "type"})
        data = tabular_simulate(env, 30, Seed(3))
        back = loads_dataset(dumps_dataset(data))
        np.testing.assert_array_equal(back.logging_propensity, data.logging_propensity)
        np.testing.assert_array_equal(back.context_ids, data.context_ids)

    def test_record_layout(self):
        data = simulate(GaussianFeatureEnv(), default_logging_policy(), 1, Seed(3))
        rec = json.loads(dumps_dataset(data))
        assert {"schema_version", "features", "action", "reward", "logging_propensities"} <= set(rec)
        assert rec["schema_version"] == 1

    @pytest.mark.parametrize(
        "bad",
        [
            "not json",
            '{"reward": 1, "logging_propensity": 0.5}',
            '{"action": 0, "reward": -1, "logging_propensity": 0.5}',
            '{"action": 5, "reward": 1, "logging_propensities": [0.5, 0.5]}',
            '{"schema_version": 9, "action": 0, "reward": 1, "logging_propensity": 0.5}',
        ],
    )
    def test_malformed_line_names_line_number(self, bad):
        good = '{"action": 0, "reward": 1, "logging_propensity": 0.5}'
        with pytest.raises(DatasetFormatError, match="line 2"):
            loads_dataset(good + "\n" + bad + "\n")


class TestSimulateCommand:
    def test_line_count_and_determinism(self, tmp_path, capsys):
        cfg = write_config(tmp_path, gaussian_config())
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
        assert len(a.read_text().splitlines()) == 300
        assert a.read_bytes() == b.read_bytes()
        assert "n=300 seed=5" in capsys.readouterr().out

    def test_zero_rounds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, gaussian_config(n_rounds=0))
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.jsonl")]) != 0
        err = capsys.readouterr().err
        assert err.startswith("error:") and len(err.strip().splitlines()) == 1

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) != 0

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = write_config(tmp_path, gaussian_config(n_rounds=5))
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["simulate", "--config", cfg, "--out", str(a)])
        main(["simulate", "--config", cfg, "--out", str(b), "--seed", "6"])
        assert a.read_bytes() != b.read_bytes()


class TestEstimateCommand:
    @pytest.fixture
    def dataset(self, tmp_path):
        cfg = write_config(tmp_path, gaussian_config(), "sim.json")
        path = tmp_path / "data.jsonl"
        main(["simulate", "--config", cfg, "--out", str(path)])
        return path

    def run_estimate(self, tmp_path, dataset, estimator, capsys):
        cfg = write_config(tmp_path, gaussian_config(estimator=estimator), "est.json")
        capsys.readouterr()
        assert main(["estimate", "--config", cfg, "--dataset", str(dataset)]) == 0
        return parse_output(capsys.readouterr().out)

    def test_unit_constants_give_file_mean(self, tmp_path, dataset, capsys):
        out = self.run_estimate(tmp_path, dataset, {"name": "dcips", "upper": 1, "lower": 1}, capsys)
        rewards = [json.loads(line)["reward"] for line in dataset.read_text().splitlines()]
        assert float(out["value"]) == pytest.approx(sum(rewards) / len(rewards), abs=1e-15)
        assert out["n_used"] == "300"

    def test_unbounded_cips_is_ips(self, tmp_path, dataset, capsys):
        a = self.run_estimate(tmp_path, dataset, {"name": "cips", "upper": "inf"}, capsys)
        b = self.run_estimate(tmp_path, dataset, {"name": "ips"}, capsys)
        assert a["value"] == b["value"]

    def test_json_output(self, tmp_path, dataset):
        cfg = write_config(tmp_path, gaussian_config(estimator={"name": "dcips", "upper": 3, "lower": 3}))
        out = tmp_path / "est.json"
        assert main(["estimate", "--config", cfg, "--dataset", str(dataset), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["clipped_above"] + payload["clipped_below"] + payload["unclipped"] == 300

    def test_malformed_dataset(self, tmp_path, dataset, capsys):
        lines = dataset.read_text().splitlines()
        lines[4] = '{"action": "x"}'
        dataset.write_text("\n".join(lines) + "\n")
        cfg = write_config(tmp_path, gaussian_config(estimator={"name": "ips"}))
        assert main(["estimate", "--config", cfg, "--dataset", str(dataset)]) != 0
        assert "line 5" in capsys.readouterr().err

    def test_worked_tabular_matches_oracle(self, tmp_path, capsys):
        raw = {"seed": 4, "environment": WORKED_ENV, "n_rounds": 100_000, "estimator": {"name": "cips", "upper": 2}}
        cfg = write_config(tmp_path, raw)
        path = tmp_path / "tab.jsonl"
        assert main(["simulate", "--config", cfg, "--out", str(path)]) == 0
        capsys.readouterr()
        assert main(["estimate", "--config", cfg, "--dataset", str(path)]) == 0
        value = float(parse_output(capsys.readouterr().out)["value"])
        data = read_dataset(path)
        # per-record term r * min(w, 2) takes 0.5/0.9 or 2 (rewards are all 1 here)
        terms = np.where(data.actions == 0, 0.5 / 0.9, 2.0) * data.rewards
        se = terms.std(ddof=1) / math.sqrt(data.n)
        assert abs(value - 0.7) <= 5 * se


class TestSweepCommand:
    def small_sweep(self, **sweep):
        spec = {"repetitions": 5, "true_reward_samples": 2000}
        spec.update(sweep)
        return gaussian_config(n_rounds=50, sweep=spec)

    def test_layout(self, tmp_path, capsys):
        cfg = write_config(tmp_path, self.small_sweep())
        out = tmp_path / "s.csv"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        meta, rows = read_sweep_csv(out)
        assert tuple(rows[0]) == SWEEP_COLUMNS
        assert sum(r["estimator"] == "cips" for r in rows) == 25
        assert sum(r["estimator"] == "dcips" for r in rows) == 25
        for key in ("schema_version", "seed", "n", "repetitions", "true_reward", "true_reward_se"):
            assert key in meta
        printed = capsys.readouterr().out
        assert "cips: min mse" in printed and "dcips: min mse" in printed

    def test_unit_grid_bias(self, tmp_path):
        cfg = write_config(tmp_path, self.small_sweep(pairs=[[1, 1]]))
        out = tmp_path / "s.csv"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        meta, rows = read_sweep_csv(out)
        (d,) = [r for r in rows if r["estimator"] == "dcips"]
        gap = float(meta["logging_mean_of_means"]) - float(meta["true_reward"])
        assert d["bias_sq"] == pytest.approx(gap**2, rel=1e-12, abs=1e-15)

    def test_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, self.small_sweep())
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["sweep", "--config", cfg, "--out", str(a)])
        main(["sweep", "--config", cfg, "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_requires_sweep_block(self, tmp_path):
        cfg = write_config(tmp_path, gaussian_config())
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s.csv")]) != 0


class TestOracleCommand:
    def run_oracle(self, tmp_path, capsys, estimator):
        cfg = write_config(tmp_path, {"environment": WORKED_ENV, "estimator": estimator})
        capsys.readouterr()
        code = main(["oracle", "--config", cfg, "--out", str(tmp_path / "cells.csv")])
        return code, parse_output(capsys.readouterr().out)

    def test_upper_only(self, tmp_path, capsys):
        code, out = self.run_oracle(tmp_path, capsys, {"name": "cips", "upper": 2})
        assert code == 0
        assert float(out["bias_total"]) == pytest.approx(-0.3, abs=1e-12)
        assert float(out["residual"]) <= 1e-12
        assert (tmp_path / "cells.csv").read_text().startswith("context,action,upper_contribution")

    def test_double(self, tmp_path, capsys):
        _, out = self.run_oracle(tmp_path, capsys, {"name": "dcips", "upper": 2, "lower": 1})
        assert float(out["bias_total"]) == pytest.approx(0.1, abs=1e-12)

    def test_inactive(self, tmp_path, capsys):
        _, out = self.run_oracle(tmp_path, capsys, {"name": "cips", "upper": 1e9})
        assert float(out["bias_total"]) == 0.0

    def test_gaussian_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, gaussian_config(estimator={"name": "cips", "upper": 2}))
        assert main(["oracle", "--config", cfg]) != 0
        assert "tabular" in capsys.readouterr().err
