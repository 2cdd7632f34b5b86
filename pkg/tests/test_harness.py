"""Tests for the Monte Carlo harness: configs, metrics, CSV round-trips."""

import numpy as np
import pytest

from apbm import harness
from apbm.errors import ApbmError, ConfigError, EmptyRecords, MissingThetaSnapshots
from apbm.harness import ExperimentConfig, MetricSeries, RunRecord


def _record(run, method, lam, truth, estimates, thetas=None, status="ok"):
    steps = truth.shape[0]
    return RunRecord(
        run=run,
        seed=run,
        method=method,
        lam=lam,
        truth=truth,
        measurements=np.zeros((steps, 2)),
        estimates=estimates,
        thetas=thetas,
        status=status,
    )


class TestExperimentConfig:
    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="pendulum")

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="lorenz", preset="chaotic")

    def test_nonpositive_runs_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="tracking", n_runs=0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="tracking", lambda_grid=(0.0, -1.0))

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="tracking", methods=("apbm", "imm"))

    def test_lambda_grid_coerced_to_floats(self):
        cfg = ExperimentConfig(experiment="tracking", lambda_grid=[0, 1])
        assert cfg.lambda_grid == (0.0, 1.0)
        assert all(isinstance(v, float) for v in cfg.lambda_grid)

    def test_tracking_defaults(self):
        cfg = harness._resolved(ExperimentConfig(experiment="tracking"))
        assert cfg.steps == 500
        assert cfg.lambda_grid == harness.TRACKING_LAMBDA_GRID
        assert cfg.methods == ("apbm", "cv")

    def test_lorenz_defaults_depend_on_preset(self):
        classical = harness._resolved(ExperimentConfig(experiment="lorenz"))
        paper = harness._resolved(ExperimentConfig(experiment="lorenz", preset="paper"))
        assert classical.steps == 4000
        assert paper.steps == 50
        assert classical.methods == ("apbm", "true_model")

    def test_explicit_values_survive_resolution(self):
        cfg = harness._resolved(
            ExperimentConfig(experiment="tracking", steps=20, lambda_grid=(1.0,), q_x=0.5)
        )
        assert cfg.steps == 20
        assert cfg.lambda_grid == (1.0,)
        assert cfg.q_x == 0.5


class TestRmseCurve:
    def test_hand_computed_single_record(self):
        # constant error of 3 in dim 0 and 4 in dim 2 -> rmse sqrt(25/2)
        truth = np.zeros((5, 4))
        est = truth.copy()
        est[:, 0] += 3.0
        est[:, 2] += 4.0
        curve = harness.rmse_curve([_record(0, "cv", None, truth, est)], dims=(0, 2))
        assert curve.shape == (5,)
        np.testing.assert_allclose(curve, np.sqrt(12.5))

    def test_averages_over_runs(self):
        truth = np.zeros((3, 4))
        est_a = truth.copy()
        est_a[:, 0] += 1.0
        est_b = truth.copy()
        est_b[:, 0] += 3.0
        curve = harness.rmse_curve(
            [_record(0, "cv", None, truth, est_a), _record(1, "cv", None, truth, est_b)],
            dims=(0,),
        )
        np.testing.assert_allclose(curve, np.sqrt((1.0 + 9.0) / 2))

    def test_failed_records_excluded(self):
        truth = np.zeros((3, 4))
        good = _record(0, "cv", None, truth, truth + 1.0)
        bad = _record(1, "cv", None, np.full_like(truth, np.nan),
                      np.full_like(truth, np.nan), status="failed: boom")
        curve = harness.rmse_curve([good, bad], dims=(0,))
        assert np.all(np.isfinite(curve))

    def test_empty_records_raise(self):
        with pytest.raises(EmptyRecords):
            harness.rmse_curve([], dims=(0,))


class TestWeightVarianceCurve:
    def test_hand_computed(self):
        truth = np.zeros((2, 4))
        thetas = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        rec = _record(0, "apbm", 0.0, truth, truth, thetas=thetas)
        curve = harness.weight_variance_curve([rec])
        np.testing.assert_allclose(curve, [np.var([1.0, 2.0, 3.0], ddof=1), 0.0])

    def test_missing_thetas_raise(self):
        truth = np.zeros((2, 4))
        with pytest.raises(MissingThetaSnapshots):
            harness.weight_variance_curve([_record(0, "cv", None, truth, truth)])


class TestComputeMetrics:
    def test_groups_by_method_and_lambda(self):
        truth = np.zeros((4, 4))
        thetas = np.ones((4, 3))
        records = [
            _record(0, "apbm", 0.0, truth, truth + 1.0, thetas=thetas),
            _record(0, "apbm", 10.0, truth, truth + 2.0, thetas=thetas),
            _record(0, "cv", None, truth, truth + 3.0),
        ]
        cfg = ExperimentConfig(experiment="tracking", steps=4)
        series = harness.compute_metrics(records, cfg)
        assert set(series.rmse) == {("apbm", 0.0), ("apbm", 10.0), ("cv", None)}
        assert set(series.weight_variance) == {0.0, 10.0}
        np.testing.assert_allclose(series.rmse[("cv", None)], 3.0)


class TestCsvRoundTrips:
    def test_rmse_round_trip_exact(self, tmp_path):
        series = MetricSeries(steps=3)
        series.rmse[("apbm", 0.1)] = np.array([1.0, np.pi, 1e-17])
        series.rmse[("cv", None)] = np.array([2.0, 3.0, 4.0])
        path = tmp_path / "rmse.csv"
        harness.export_rmse_csv(series, path)
        back = harness.read_rmse_csv(path)
        assert set(back) == set(series.rmse)
        for key, curve in series.rmse.items():
            np.testing.assert_array_equal(back[key], curve)

    def test_theta_var_round_trip_exact(self, tmp_path):
        series = MetricSeries(steps=2)
        series.weight_variance[0.0] = np.array([1e-3, 2e-3])
        series.weight_variance[1e6] = np.array([0.0, 5e-18])
        path = tmp_path / "theta_var.csv"
        harness.export_theta_var_csv(series, path)
        back = harness.read_theta_var_csv(path)
        assert set(back) == {0.0, 1e6}
        for lam, curve in series.weight_variance.items():
            np.testing.assert_array_equal(back[lam], curve)

    def test_trajectory_csv_header_and_rows(self, tmp_path):
        truth = np.arange(8.0).reshape(2, 4)
        rec = _record(0, "cv", None, truth, truth + 0.5)
        path = tmp_path / "traj.csv"
        harness.export_trajectory_csv(rec, path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[:2] == ["step", "truth_0"]
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "0"

    def test_manifest_sorted_by_run(self, tmp_path):
        truth = np.zeros((2, 4))
        records = [
            _record(1, "cv", None, truth, truth),
            _record(0, "apbm", 0.5, truth, truth),
        ]
        path = tmp_path / "manifest.csv"
        harness.export_manifest_csv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "run,seed,method,lambda,status"
        assert lines[1].startswith("0,0,apbm,0.5,ok")
        assert lines[2].startswith("1,1,cv,,ok")


class TestMonteCarlo:
    def test_failure_quota_enforced(self, monkeypatch):
        monkeypatch.setenv("APBM_THREADS", "1")

        def always_fails(cfg, r):
            truth = np.full((2, 4), np.nan)
            return [_record(r, "cv", None, truth, truth, status="failed: boom")]

        monkeypatch.setattr(harness, "_run_one", always_fails)
        with pytest.raises(ApbmError, match="failed"):
            harness.run_monte_carlo(ExperimentConfig(experiment="tracking", n_runs=2))

    def test_run_records_paired_within_run(self, monkeypatch):
        monkeypatch.setenv("APBM_THREADS", "1")
        cfg = ExperimentConfig(
            experiment="tracking", n_runs=2, steps=10, lambda_grid=(0.0,), methods=("apbm", "cv")
        )
        records = harness.run_monte_carlo(cfg)
        assert len(records) == 4
        by_run = {}
        for rec in records:
            by_run.setdefault(rec.run, []).append(rec)
        for run, recs in by_run.items():
            assert {rec.method for rec in recs} == {"apbm", "cv"}
            # same simulated truth feeds every method in a run
            np.testing.assert_array_equal(recs[0].truth, recs[1].truth)
            np.testing.assert_array_equal(recs[0].measurements, recs[1].measurements)

    def test_worker_count_env_override(self, monkeypatch):
        monkeypatch.setenv("APBM_THREADS", "3")
        assert harness._worker_count(100) == 3
        monkeypatch.delenv("APBM_THREADS")
        assert harness._worker_count(1) == 1


class TestLoadConfig:
    def test_valid_mapping(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            "experiment: tracking\nn_runs: 3\nlambda_grid: [0.0, 1.0]\nmethods: [apbm]\n"
        )
        cfg = harness.load_config(path)
        assert cfg.experiment == "tracking"
        assert cfg.n_runs == 3
        assert cfg.lambda_grid == (0.0, 1.0)
        assert cfg.methods == ("apbm",)

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("experiment: tracking\nturbo: true\n")
        with pytest.raises(ConfigError, match="turbo"):
            harness.load_config(path)

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("- experiment\n- tracking\n")
        with pytest.raises(ConfigError):
            harness.load_config(path)
