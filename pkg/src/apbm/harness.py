"""Monte Carlo experiment runner, metrics and file outputs.

Every run r simulates its own truth with seed ``base_seed + r`` and a
derived seed for the initial-estimate draw; all configured methods and
lambda values filter the *same* measurement stream within a run, so the
comparison is paired.  Results are keyed by run index and reduced after
a deterministic sort, which makes the whole pipeline a pure function of
the experiment config regardless of how many workers execute it.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import augment, mlp, systems
from .errors import (
    ApbmError,
    ConfigError,
    EmptyRecords,
    MissingThetaSnapshots,
)
from .filtercore import GaussianBelief, predict, update

TRACKING_LAMBDA_GRID = (0.0, 0.01, 0.1, 10.0, 1e6)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str  # "lorenz" | "tracking"
    preset: str = "classical"  # lorenz only: "paper" | "classical"
    n_runs: int = 100
    steps: Optional[int] = None
    base_seed: int = 0
    lambda_grid: Optional[tuple[float, ...]] = None
    methods: Optional[tuple[str, ...]] = None
    q_x: Optional[float] = None  # filter-side process noise scale
    q_theta: Optional[float] = None
    theta0_cov: Optional[float] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in ("lorenz", "tracking"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.preset not in ("paper", "classical"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if any(v < 0 for v in grid):
                raise ConfigError("lambda values must be nonnegative")
            object.__setattr__(self, "lambda_grid", grid)
        if self.methods is not None:
            methods = tuple(self.methods)
            allowed = {"apbm", "cv", "true_model"}
            if not set(methods) <= allowed:
                raise ConfigError(f"methods must be a subset of {sorted(allowed)}")
            object.__setattr__(self, "methods", methods)


@dataclass
class RunRecord:
    """Everything one filtered run contributes to the metrics."""

    run: int
    seed: int
    method: str
    lam: Optional[float]
    truth: np.ndarray
    measurements: np.ndarray
    estimates: np.ndarray
    thetas: Optional[np.ndarray] = None
    status: str = "ok"


@dataclass(frozen=True)
class MetricSeries:
    """Per-step metric curves keyed by (method, lambda)."""

    steps: int
    rmse: dict = field(default_factory=dict)
    weight_variance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# experiment setup
# ---------------------------------------------------------------------------


def _resolved(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill in experiment-dependent defaults."""
    if cfg.experiment == "tracking":
        return replace(
            cfg,
            steps=cfg.steps or 500,
            lambda_grid=cfg.lambda_grid if cfg.lambda_grid is not None else TRACKING_LAMBDA_GRID,
            methods=cfg.methods or ("apbm", "cv"),
            q_x=cfg.q_x if cfg.q_x is not None else 0.02,
            q_theta=cfg.q_theta if cfg.q_theta is not None else 5e-5,
            theta0_cov=cfg.theta0_cov if cfg.theta0_cov is not None else 1e-4,
        )
    default_steps = 4000 if cfg.preset == "classical" else 50
    return replace(
        cfg,
        steps=cfg.steps or default_steps,
        lambda_grid=cfg.lambda_grid if cfg.lambda_grid is not None else (0.0,),
        methods=cfg.methods or ("apbm", "true_model"),
        q_x=cfg.q_x if cfg.q_x is not None else 1e-4,
        q_theta=cfg.q_theta if cfg.q_theta is not None else 3e-4,
        theta0_cov=cfg.theta0_cov if cfg.theta0_cov is not None else 1e-2,
    )


class _Setup:
    """Per-experiment simulator, physics model and network architecture."""

    def __init__(self, cfg: ExperimentConfig):
        cfg = _resolved(cfg)
        self.cfg = cfg
        if cfg.experiment == "tracking":
            self.sys_cfg = systems.TrackingConfig(steps=cfg.steps)
            self.physics = systems.tracking_physics_model(self.sys_cfg, q_x=cfg.q_x)
            self.nn = mlp.MlpSpec((4, 5, 4))
            self.combiner: augment.Combiner = augment.Additive()
            self.baseline = "cv"
            self.x0 = self.sys_cfg.x0
            self.init_cov = systems.tracking_initial_covariance()
            self.rmse_dims = (0, 2)  # position only
        else:
            make = (
                systems.lorenz_classical_config
                if cfg.preset == "classical"
                else systems.lorenz_paper_config
            )
            self.sys_cfg = make(steps=cfg.steps)
            self.physics = systems.lorenz_true_model(self.sys_cfg, q_x=cfg.q_x)
            self.nn = mlp.MlpSpec((3, 5, 1))
            self.combiner = augment.ReplaceComponents((0,))
            self.baseline = "true_model"
            self.x0 = self.sys_cfg.x0
            self.init_cov = 0.1 * np.eye(3)
            self.rmse_dims = (0, 1, 2)  # full state

    def simulate(self, seed: int) -> systems.SimTruth:
        if self.cfg.experiment == "tracking":
            return systems.tracking_simulate(self.sys_cfg, seed)
        return systems.lorenz_simulate(self.sys_cfg, seed)

    def apbm_config(self, lam: float) -> augment.ApbmConfig:
        return augment.make_config(
            self.nn,
            self.combiner,
            lam,
            q_theta_scale=self.cfg.q_theta,
            theta0_cov_scale=self.cfg.theta0_cov,
        )


def _filter_run(model, belief: GaussianBelief, observations: np.ndarray) -> np.ndarray:
    means = np.empty((observations.shape[0], belief.dim))
    for k in range(observations.shape[0]):
        belief = update(predict(belief, model), model, observations[k])
        means[k] = belief.mean
    return means


def _run_one(cfg: ExperimentConfig, r: int) -> list[RunRecord]:
    """All method/lambda records for Monte Carlo run r."""
    setup = _Setup(cfg)
    cfg = setup.cfg
    seed = cfg.base_seed + r
    d = setup.physics.state_dim
    steps = cfg.steps

    def _failed(method: str, lam: Optional[float], msg: str) -> RunRecord:
        nan2 = np.full((steps, d), np.nan)
        return RunRecord(
            run=r, seed=seed, method=method, lam=lam,
            truth=np.full((steps, d), np.nan), measurements=np.full((steps, setup.physics.meas_dim), np.nan),
            estimates=nan2, status=f"failed: {msg}",
        )

    jobs: list[tuple[str, Optional[float]]] = []
    for method in cfg.methods:
        if method == "apbm":
            jobs.extend(("apbm", lam) for lam in cfg.lambda_grid)
        else:
            jobs.append((method, None))

    try:
        truth = setup.simulate(seed)
    except ApbmError as exc:
        return [_failed(method, lam, str(exc)) for method, lam in jobs]

    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    x0_hat = setup.x0 + init_rng.standard_normal(d) @ systems._psd_sqrt(setup.init_cov).T

    records = []
    for method, lam in jobs:
        try:
            if method == "apbm":
                acfg = setup.apbm_config(lam)
                model = augment.build_augmented_model(setup.physics, setup.nn, acfg)
                belief0 = augment.initial_belief(acfg, x0_hat, setup.init_cov)
                obs = truth.measurements
                if acfg.effective_lambda > 0.0:
                    obs = np.concatenate(
                        [obs, np.tile(acfg.theta_bar, (steps, 1))], axis=1
                    )
                means = _filter_run(model, belief0, obs)
                rec = RunRecord(
                    run=r, seed=seed, method=method, lam=lam,
                    truth=truth.states, measurements=truth.measurements,
                    estimates=means[:, :d], thetas=means[:, d:],
                )
            else:
                belief0 = GaussianBelief(mean=x0_hat, cov=setup.init_cov)
                means = _filter_run(setup.physics, belief0, truth.measurements)
                rec = RunRecord(
                    run=r, seed=seed, method=method, lam=lam,
                    truth=truth.states, measurements=truth.measurements, estimates=means,
                )
            records.append(rec)
        except ApbmError as exc:
            records.append(_failed(method, lam, str(exc)))
    return records


def _worker_count(n_runs: int) -> int:
    env = os.environ.get("APBM_THREADS")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, n_runs)


def run_monte_carlo(cfg: ExperimentConfig) -> list[RunRecord]:
    """Execute all runs; deterministic regardless of worker count."""
    cfg = _resolved(cfg)
    workers = _worker_count(cfg.n_runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_run_one, [cfg] * cfg.n_runs, range(cfg.n_runs)))
    else:
        per_run = [_run_one(cfg, r) for r in range(cfg.n_runs)]
    records = [rec for batch in per_run for rec in batch]
    n_failed = sum(1 for rec in records if rec.status != "ok")
    if n_failed > 0.05 * len(records):
        raise ApbmError(f"{n_failed}/{len(records)} filter runs failed")
    return records


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def rmse_curve(records: Sequence[RunRecord], dims: Sequence[int]) -> np.ndarray:
    """Per-step RMSE over runs, normalized by dimension and run count."""
    records = [rec for rec in records if rec.status == "ok"]
    if not records:
        raise EmptyRecords("no successful records to aggregate")
    steps = records[0].truth.shape[0]
    dims = list(dims)
    total = np.zeros(steps)
    for rec in records:
        if rec.truth.shape[0] != steps:
            raise EmptyRecords("records have inconsistent lengths")
        err = rec.truth[:, dims] - rec.estimates[:, dims]
        total += np.sum(err * err, axis=1)
    return np.sqrt(total / (len(dims) * len(records)))


def weight_variance_curve(records: Sequence[RunRecord]) -> np.ndarray:
    """Mean (over runs) of the per-step sample variance of the theta entries."""
    records = [rec for rec in records if rec.status == "ok"]
    if not records:
        raise EmptyRecords("no successful records to aggregate")
    if any(rec.thetas is None for rec in records):
        raise MissingThetaSnapshots("records carry no parameter snapshots")
    return np.mean([np.var(rec.thetas, axis=1, ddof=1) for rec in records], axis=0)


def _group_key(rec: RunRecord) -> tuple[str, Optional[float]]:
    return (rec.method, rec.lam)


def compute_metrics(records: Sequence[RunRecord], cfg: ExperimentConfig) -> MetricSeries:
    """RMSE per (method, lambda) plus weight-variance per lambda."""
    cfg = _resolved(cfg)
    dims = (0, 2) if cfg.experiment == "tracking" else (0, 1, 2)
    groups: dict[tuple[str, Optional[float]], list[RunRecord]] = {}
    for rec in records:
        groups.setdefault(_group_key(rec), []).append(rec)
    steps = next(iter(groups.values()))[0].truth.shape[0]
    series = MetricSeries(steps=steps)
    for key in sorted(groups, key=lambda k: (k[0], -1.0 if k[1] is None else k[1])):
        series.rmse[key] = rmse_curve(groups[key], dims)
        if key[0] == "apbm":
            series.weight_variance[key[1]] = weight_variance_curve(groups[key])
    return series


# ---------------------------------------------------------------------------
# file outputs
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _open_csv(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def export_rmse_csv(series: MetricSeries, path) -> None:
    with _open_csv(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "method", "lambda", "rmse"])
        for (method, lam), curve in series.rmse.items():
            lam_str = "" if lam is None else _fmt(lam)
            for k, v in enumerate(curve):
                writer.writerow([k, method, lam_str, _fmt(v)])


def read_rmse_csv(path) -> dict:
    out: dict[tuple[str, Optional[float]], list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            lam = float(row["lambda"]) if row["lambda"] else None
            out.setdefault((row["method"], lam), []).append(float(row["rmse"]))
    return {k: np.asarray(v) for k, v in out.items()}


def export_theta_var_csv(series: MetricSeries, path) -> None:
    with _open_csv(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lambda", "mean_variance"])
        for lam, curve in series.weight_variance.items():
            for k, v in enumerate(curve):
                writer.writerow([k, _fmt(lam), _fmt(v)])


def read_theta_var_csv(path) -> dict:
    out: dict[float, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(float(row["lambda"]), []).append(float(row["mean_variance"]))
    return {k: np.asarray(v) for k, v in out.items()}


def export_trajectory_csv(record: RunRecord, path) -> None:
    n = record.truth.shape[1]
    m = record.measurements.shape[1]
    with _open_csv(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step"]
            + [f"truth_{i}" for i in range(n)]
            + [f"meas_{i}" for i in range(m)]
            + [f"est_{i}" for i in range(n)]
        )
        for k in range(record.truth.shape[0]):
            writer.writerow(
                [k]
                + [_fmt(v) for v in record.truth[k]]
                + [_fmt(v) for v in record.measurements[k]]
                + [_fmt(v) for v in record.estimates[k]]
            )


def export_manifest_csv(records: Sequence[RunRecord], path) -> None:
    rows = sorted(records, key=lambda r: (r.run, r.method, -1.0 if r.lam is None else r.lam))
    with _open_csv(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "method", "lambda", "status"])
        for rec in rows:
            lam_str = "" if rec.lam is None else _fmt(rec.lam)
            writer.writerow([rec.run, rec.seed, rec.method, lam_str, rec.status])


def emit_plots(series: MetricSeries, out_dir) -> list[Path]:
    """RMSE-vs-time per (method, lambda) and weight-variance-vs-time, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    for (method, lam), curve in series.rmse.items():
        label = method if lam is None else f"{method} lambda={lam:g}"
        ax.plot(np.arange(len(curve)), curve, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("RMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "rmse.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    written.append(path)

    if series.weight_variance:
        fig, ax = plt.subplots(figsize=(7, 4))
        for lam, curve in series.weight_variance.items():
            ax.plot(np.arange(len(curve)), curve, label=f"lambda={lam:g}")
        ax.set_xlabel("step")
        ax.set_ylabel("mean weight variance")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "theta_var.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def run_experiment(cfg: ExperimentConfig, out_dir, write_trajectories: bool = False) -> MetricSeries:
    """Full pipeline: Monte Carlo, metrics, CSVs and plots."""
    out_dir = Path(out_dir)
    records = run_monte_carlo(cfg)
    series = compute_metrics(records, cfg)
    export_rmse_csv(series, out_dir / "rmse.csv")
    if series.weight_variance:
        export_theta_var_csv(series, out_dir / "theta_var.csv")
    export_manifest_csv(records, out_dir / "runs_manifest.csv")
    if write_trajectories:
        traj_dir = out_dir / "trajectories"
        for rec in records:
            lam_str = "" if rec.lam is None else f"_lambda{rec.lam:g}"
            export_trajectory_csv(rec, traj_dir / f"run{rec.run:03d}_{rec.method}{lam_str}.csv")
    emit_plots(series, out_dir)
    return series


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a YAML mapping; unknown keys rejected."""
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a key/value mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("lambda_grid", "methods"):
        if key in data and data[key] is not None:
            data[key] = tuple(data[key])
    return ExperimentConfig(**data)
