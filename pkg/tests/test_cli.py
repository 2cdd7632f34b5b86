"""End-to-end tests of the command-line interface."""

import numpy as np
import pytest

from apbm import cli, harness


@pytest.fixture(autouse=True)
def _serial(monkeypatch):
    # one worker keeps the tiny CLI runs cheap and deterministic
    monkeypatch.setenv("APBM_THREADS", "1")


def _write_config(tmp_path, **overrides):
    lines = {
        "experiment": "tracking",
        "n_runs": 2,
        "steps": 12,
        "lambda_grid": "[0.0, 1.0]",
        "methods": "[apbm, cv]",
    }
    lines.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text("".join(f"{k}: {v}\n" for k, v in lines.items()))
    return path


def test_missing_subcommand_exits(capsys):
    with pytest.raises(SystemExit):
        cli.main([])


def test_simulate_tracking_writes_truth_csv(tmp_path, capsys):
    rc = cli.main(["simulate", "--experiment", "tracking", "--seed", "7", "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "truth.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[0] == "step"
    assert "omega" in header
    assert len(lines) == 501  # header + default 500 steps


def test_simulate_lorenz_classical(tmp_path):
    rc = cli.main(["simulate", "--experiment", "lorenz", "--seed", "0", "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "truth.csv").read_text().splitlines()
    assert "omega" not in lines[0]
    assert len(lines) == 4001


def test_simulate_is_seed_repeatable(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cli.main(["simulate", "--experiment", "tracking", "--seed", "3", "--out", str(out_a)])
    cli.main(["simulate", "--experiment", "tracking", "--seed", "3", "--out", str(out_b)])
    assert (out_a / "truth.csv").read_bytes() == (out_b / "truth.csv").read_bytes()


def test_run_produces_metrics_and_plots(tmp_path):
    config = _write_config(tmp_path)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(config), "--out", str(out)])
    assert rc == 0
    for name in ("rmse.csv", "theta_var.csv", "runs_manifest.csv", "rmse.svg", "theta_var.svg"):
        assert (out / name).exists(), name
    rmse = harness.read_rmse_csv(out / "rmse.csv")
    assert set(rmse) == {("apbm", 0.0), ("apbm", 1.0), ("cv", None)}
    assert all(len(curve) == 12 for curve in rmse.values())
    assert all(np.all(np.isfinite(curve)) for curve in rmse.values())


def test_run_with_trajectories(tmp_path):
    config = _write_config(tmp_path, n_runs=1, lambda_grid="[0.0]")
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(config), "--out", str(out), "--trajectories"])
    assert rc == 0
    traj = sorted((out / "trajectories").glob("*.csv"))
    assert [p.name for p in traj] == ["run000_apbm_lambda0.csv", "run000_cv.csv"]


def test_sweep_overrides_grid_and_runs(tmp_path):
    config = _write_config(tmp_path)
    out = tmp_path / "out"
    rc = cli.main(
        ["sweep", "--config", str(config), "--lambdas", "0.5,2.0", "--runs", "1",
         "--out", str(out)]
    )
    assert rc == 0
    rmse = harness.read_rmse_csv(out / "rmse.csv")
    assert set(rmse) == {("apbm", 0.5), ("apbm", 2.0), ("cv", None)}


def test_plot_from_run_directory(tmp_path):
    config = _write_config(tmp_path, n_runs=1)
    out = tmp_path / "out"
    cli.main(["run", "--config", str(config), "--out", str(out)])
    plot = tmp_path / "replot.svg"
    rc = cli.main(["plot", "--in", str(out), "--out", str(plot)])
    assert rc == 0
    assert plot.exists()
    assert (tmp_path / "replot_theta_var.svg").exists()


def test_missing_config_reports_error(tmp_path, capsys):
    rc = cli.main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bad_config_key_reports_error(tmp_path, capsys):
    config = _write_config(tmp_path, warp_drive="on")
    rc = cli.main(["run", "--config", str(config), "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "warp_drive" in capsys.readouterr().err
