"""Smoke test for the resample_lab_py extension module."""

import json
import math
import os
import tempfile

import resample_lab_py as rl


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    spec = rl.AssetSpec("x", mu=0.02, sigma2_r=0.01, psi=0.1, r2=0.2)
    assert close(spec.theta, 0.2, 1e-12)
    assert close(spec.phi, 0.5, 1e-12)

    assert close(rl.theoretical_bias_mean(spec, 2, 100.0), -7.5e-4, 1e-12)
    assert close(rl.theoretical_bias_var(spec, 2, 100.0), -6.3625e-6, 1e-12)
    assert close(rl.theoretical_bias_sr(spec, 60), 7.834e-4, 1e-6)

    b = rl.bounds(0.2, 0.1, 100.0, 60)
    assert close(b.mean_bound, 1e-3, 1e-12)
    assert close(b.var_bound, 1.22e-5, 1e-15)
    assert close(b.sr_analytical, -0.195, 1e-12)
    assert close(b.sr_numerical, -0.1478328, 1e-6)

    rows = rl.simulate_path([spec], 240, seed=7)
    assert len(rows) == 240 and len(rows[0]) == 1
    assert rows == rl.simulate_path([spec], 240, seed=7)

    shuffled = rl.shuffle_path(rows, seed=3)
    assert sorted(shuffled) == sorted(rows)

    cfg = rl.BacktestConfig(window=60, gamma=100.0)
    standard = rl.standard_backtest(rows, cfg)
    identity = rl.resampled_backtest(rows, cfg, "identity", 1)
    assert standard.sharpe == identity.sharpe
    assert standard.count == 180
    assert len(rl.realized_returns(rows, cfg)) == 180
    rl.resampled_backtest(rows, cfg, "block_5", 1)

    known = rl.BacktestConfig(60, 100.0, "known_covariance", known_variances=[0.01])
    est = rl.mc_bias([spec], known, paths=200, length=480, seed=1)
    assert est.paths == 200 and est.bias_mean < 0

    assert 300 <= rl.required_sample_size() <= 800

    reports = json.loads(rl.run_cross_section(json.dumps({"universe": {"recipe": {"count": 4}}, "paths": 20, "noise": "constant"})))
    assert len(reports) == 1 and len(reports[0]["rows"]) == 4

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "returns.csv")
        with open(path, "w") as f:
            f.write("date,a\n")
            for t, r in enumerate(rows[:120]):
                f.write(f"{1990 + t // 12}-{t % 12 + 1:02d},{r[0]!r}\n")
        cfg_json = json.dumps({"backtest": {"window": 24}, "bootstrap": {"replications": 199, "mean_block": 6, "shuffles": 1}})
        report = json.loads(rl.run_empirical(path, cfg_json))
        assert len(report["records"]) == 1
        assert 0.0 <= report["records"][0]["p_sr"] <= 1.0

    try:
        rl.AssetSpec("bad", 0.0, -1.0, 0.0, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative variance accepted")

    assert math.isfinite(rl.sum_a(60, 0.5))
    print("smoke test passed")


if __name__ == "__main__":
    main()
