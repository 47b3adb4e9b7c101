import json
import subprocess
import sys

import numpy as np
import pytest

from gross_exposure.cli import main, parse_grid, parse_strategies
from gross_exposure.core import CovarianceEstimate, ReturnPanel
from gross_exposure.io import (read_covariance, read_panel, read_table, read_weights,
                               write_covariance, write_panel)
from gross_exposure.lars import lars_path, transform_regression


def cov_file(tmp_path, m, ids=None, name="cov.csv"):
    m = np.asarray(m, float)
    f = tmp_path / name
    write_covariance(CovarianceEstimate(m, asset_ids=ids), f)
    return str(f)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--p", "12", "--n", "300", "--seed", "5", "--out", str(out)]) == 0
    return out


class TestParsing:
    @pytest.mark.parametrize("text, expected", [
        ("1,1.5,2", [1.0, 1.5, 2.0]),
        ("0:1:0.25", [0.0, 0.25, 0.5, 0.75, 1.0]),
        ("1:2:0.3", [1.0, 1.3, 1.6, 1.9]),
    ])
    def test_grid(self, text, expected):
        assert parse_grid(text) == pytest.approx(expected)

    def test_strategies(self):
        assert parse_strategies("no_short,exact_qp:5,gmv") == [
            ("no_short", 2.0), ("exact_qp", 5.0), ("gmv", 2.0)]


class TestSimulate:
    def test_files(self, simulated):
        panel = read_panel(simulated / "panel.csv")
        assert panel.returns.shape == (300, 12)
        header = (simulated / "panel.csv").read_text().splitlines()[0]
        assert len(header.split(",")) == 13
        assert read_panel(simulated / "factors.csv").asset_ids == ("MKT", "SMB", "HML")
        manifest = json.loads((simulated / "manifest.json").read_text())
        assert manifest["seed"] == 5 and manifest["command"] == "simulate"

    def test_default_true_sigma(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path)]) == 0
        S = read_covariance(tmp_path / "true_sigma.csv").matrix
        assert S.shape == (200, 200)
        np.testing.assert_array_equal(S, S.T)
        assert read_panel(tmp_path / "panel.csv").n_periods == 252

    def test_config_file(self, tmp_path, simulated):
        out = tmp_path / "again"
        assert main(["simulate", "--config", str(simulated / "config.txt"), "--out", str(out)]) == 0
        assert (out / "panel.csv").read_bytes() == (simulated / "panel.csv").read_bytes()


class TestOptimize:
    def test_identity(self, tmp_path):
        assert main(["optimize", "--cov", cov_file(tmp_path, np.eye(3)), "--c", "1.5",
                     "--out", str(tmp_path)]) == 0
        np.testing.assert_allclose(read_weights(tmp_path / "weights.csv").weights, 1 / 3,
                                   atol=1e-12)

    def test_two_asset(self, tmp_path):
        assert main(["optimize", "--cov", cov_file(tmp_path, [[1, 1.5], [1.5, 4]]),
                     "--c", "1.2", "--out", str(tmp_path)]) == 0
        np.testing.assert_allclose(read_weights(tmp_path / "weights.csv").weights,
                                   [1.1, -0.1], atol=1e-12)

    def test_gmv_and_no_short(self, tmp_path):
        cov = cov_file(tmp_path, [[1, 1.5], [1.5, 4]])
        assert main(["optimize", "--cov", cov, "--gmv", "--out", str(tmp_path / "g")]) == 0
        np.testing.assert_allclose(read_weights(tmp_path / "g" / "weights.csv").weights,
                                   [1.25, -0.25], atol=1e-12)
        assert main(["optimize", "--cov", cov, "--no-short", "--out", str(tmp_path / "n")]) == 0
        np.testing.assert_allclose(read_weights(tmp_path / "n" / "weights.csv").weights,
                                   [1.0, 0.0], atol=1e-12)

    def test_constraints(self, tmp_path):
        cons = tmp_path / "A.csv"
        cons.write_text("1,1,0,0,0.6\n")
        assert main(["optimize", "--cov", cov_file(tmp_path, np.diag([1, 2, 3, 4.0])),
                     "--c", "2", "--constraints", str(cons), "--out", str(tmp_path)]) == 0
        w = read_weights(tmp_path / "weights.csv").weights
        assert w[0] + w[1] == pytest.approx(0.6, abs=1e-10)


class TestPathImproveSweep:
    def test_path_reproduces_knots(self, tmp_path, rng):
        B = rng.standard_normal((3, 3))
        S = B @ B.T + 0.1 * np.eye(3)
        cov = cov_file(tmp_path, S, ("x", "y", "z"))
        assert main(["path", "--cov", cov, "--target", "equal", "--grid", "0:2:0.5",
                     "--out", str(tmp_path)]) == 0
        expected = lars_path(transform_regression(read_covariance(cov), np.full(3, 1 / 3)))
        rows = read_table(tmp_path / "path.csv")
        assert [float(r["d"]) for r in rows] == list(expected.d)
        assert [float(r["empirical_variance"]) for r in rows] == list(expected.empirical_variance)
        grid = read_table(tmp_path / "path_grid.csv")
        assert [float(r["d"]) for r in grid] == [0.0, 0.5, 1.0, 1.5, 2.0]

    def test_path_targets(self, tmp_path):
        cov = cov_file(tmp_path, np.diag([1.0, 2.0, 3.0]), ("x", "y", "z"))
        assert main(["path", "--cov", cov, "--target", "y", "--out", str(tmp_path / "a")]) == 0
        assert "asset" in (tmp_path / "a" / "path.csv").read_text().splitlines()[0]
        assert main(["path", "--cov", cov, "--target", "nothing", "--out", str(tmp_path)]) == 2

    def test_improve(self, tmp_path, simulated):
        assert main(["improve", "--panel", str(simulated / "panel.csv"),
                     "--cov", str(simulated / "true_sigma.csv"), "--grid", "0,0.5,1",
                     "--out", str(tmp_path)]) == 0
        rows = read_table(tmp_path / "improve.csv")
        assert rows[0]["n_modified"] == "0"
        assert float(rows[2]["empirical"]) <= float(rows[0]["empirical"])

    def test_sweep_exact_covariance(self, tmp_path, simulated):
        assert main(["sweep", "--cov", str(simulated / "true_sigma.csv"),
                     "--out", str(tmp_path)]) == 0
        for r in read_table(tmp_path / "sweep.csv"):
            assert float(r["oracle"]) == pytest.approx(float(r["actual"]), rel=1e-9)
            assert r["actual"] == r["empirical"]

    def test_sweep_panel_and_simulation(self, tmp_path, simulated):
        assert main(["sweep", "--cov", str(simulated / "true_sigma.csv"), "--panel",
                     str(simulated / "panel.csv"), "--out", str(tmp_path / "a")]) == 0
        rows = read_table(tmp_path / "a" / "sweep.csv")
        assert all(r["bounds_ok"] == "1" for r in rows)
        assert main(["sweep", "--p", "10", "--n", "60", "--reps", "3", "--grid", "1,2",
                     "--estimator", "sample,ewma", "--out", str(tmp_path / "b")]) == 0
        assert len(read_table(tmp_path / "b" / "replicates.csv")) == 3 * 2 * 2
        assert len(read_table(tmp_path / "b" / "summary.csv")) == 4


class TestBacktest:
    def test_constant_panel(self, tmp_path):
        f = tmp_path / "flat.csv"
        write_panel(ReturnPanel(np.full((80, 2), 0.001)), f)
        assert main(["backtest", "--panel", str(f), "--window", "30", "--rebalance", "10",
                     "--strategy", "no_short,exact_qp:2,equal_weight",
                     "--out", str(tmp_path)]) == 0
        rows = read_table(tmp_path / "aggregate.csv")
        assert [r["strategy"] for r in rows] == ["no_short", "exact_qp(c=2)", "equal_weight"]
        assert all(float(r["std_pct"]) == 0.0 for r in rows)

    def test_factor_estimator(self, tmp_path, simulated):
        assert main(["backtest", "--panel", str(simulated / "panel.csv"), "--factors",
                     str(simulated / "factors.csv"), "--estimator", "factor", "--window",
                     "120", "--rebalance", "60", "--strategy", "lars_approx:1.5",
                     "--out", str(tmp_path)]) == 0
        for r in read_table(tmp_path / "rebalances.csv"):
            assert float(r["gross_exposure"]) <= 1.5 + 1e-6


class TestExitCodes:
    def test_usage(self, tmp_path, capsys):
        assert main([]) == 2
        assert main(["optimize", "--cov", cov_file(tmp_path, np.eye(2)), "--c", "0.5",
                     "--out", str(tmp_path)]) == 2
        assert "at least 1" in capsys.readouterr().err
        assert main(["path", "--cov", cov_file(tmp_path, np.eye(2)), "--grid", "a:b",
                     "--out", str(tmp_path)]) == 2

    def test_data(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(",a,b\na,1,0\n")
        assert main(["optimize", "--cov", str(bad), "--out", str(tmp_path)]) == 3
        assert "bad.csv" in capsys.readouterr().err
        assert main(["optimize", "--cov", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path)]) == 3
        indefinite = cov_file(tmp_path, [[1, 2], [2, 1]], name="ind.csv")
        assert main(["optimize", "--cov", indefinite, "--c", "2", "--out", str(tmp_path)]) == 3

    def test_numerical(self, tmp_path):
        singular = cov_file(tmp_path, np.ones((2, 2)), name="one.csv")
        assert main(["optimize", "--cov", singular, "--gmv", "--out", str(tmp_path)]) == 4
        cons = tmp_path / "A.csv"
        cons.write_text("1,0,5\n")
        assert main(["optimize", "--cov", cov_file(tmp_path, np.eye(2)), "--c", "1.5",
                     "--constraints", str(cons), "--out", str(tmp_path)]) == 4

    def test_module_entry_point(self, tmp_path):
        cov = cov_file(tmp_path, np.eye(2))
        done = subprocess.run([sys.executable, "-m", "gross_exposure", "optimize", "--cov", cov,
                               "--c", "0.2", "--out", str(tmp_path)], capture_output=True)
        assert done.returncode == 2
        assert b"optimize" in done.stderr
