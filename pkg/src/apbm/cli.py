"""Command-line interface.

Subcommands:
  simulate  generate a single ground-truth trajectory with measurements
  run       execute the Monte Carlo experiment described by a config file
  sweep     like run, with the lambda grid and run count given inline
  plot      re-plot metric CSVs produced by an earlier run
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .errors import ApbmError
from . import harness, systems


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment == "tracking":
        truth = systems.tracking_simulate(systems.TrackingConfig(), args.seed)
    elif args.preset == "paper":
        truth = systems.lorenz_simulate(systems.lorenz_paper_config(), args.seed)
    else:
        truth = systems.lorenz_simulate(systems.lorenz_classical_config(), args.seed)
    n = truth.states.shape[1]
    m = truth.measurements.shape[1]
    path = out / "truth.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step"] + [f"truth_{i}" for i in range(n)] + [f"meas_{i}" for i in range(m)]
        if truth.omegas is not None:
            header.append("omega")
        writer.writerow(header)
        for k in range(truth.states.shape[0]):
            row = [k] + [f"{v:.17g}" for v in truth.states[k]]
            row += [f"{v:.17g}" for v in truth.measurements[k]]
            if truth.omegas is not None:
                row.append(f"{truth.omegas[k]:.17g}")
            writer.writerow(row)
    print(f"wrote {path}")
    return 0


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    harness.run_experiment(cfg, args.out, write_trajectories=args.trajectories)
    print(f"wrote metrics to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from dataclasses import replace

    cfg = harness.load_config(args.config)
    lambdas = tuple(float(v) for v in args.lambdas.split(","))
    cfg = replace(cfg, lambda_grid=lambdas, n_runs=args.runs)
    harness.run_experiment(cfg, args.out, write_trajectories=args.trajectories)
    print(f"wrote sweep metrics to {args.out}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    in_dir = Path(getattr(args, "in"))
    rmse = harness.read_rmse_csv(in_dir / "rmse.csv")
    fig, ax = plt.subplots(figsize=(7, 4))
    for (method, lam), curve in sorted(rmse.items(), key=lambda kv: (kv[0][0], kv[0][1] or -1)):
        label = method if lam is None else f"{method} lambda={lam:g}"
        ax.plot(np.arange(len(curve)), curve, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("RMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, metadata={"Date": None} if str(args.out).endswith(".svg") else None)
    plt.close(fig)

    theta_path = in_dir / "theta_var.csv"
    if theta_path.exists():
        var = harness.read_theta_var_csv(theta_path)
        fig, ax = plt.subplots(figsize=(7, 4))
        for lam, curve in sorted(var.items()):
            ax.plot(np.arange(len(curve)), curve, label=f"lambda={lam:g}")
        ax.set_xlabel("step")
        ax.set_ylabel("mean weight variance")
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = Path(args.out)
        var_path = out.with_name(out.stem + "_theta_var" + out.suffix)
        fig.savefig(var_path, metadata={"Date": None} if var_path.suffix == ".svg" else None)
        plt.close(fig)
    print(f"wrote plot(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apbm")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one truth trajectory")
    p.add_argument("--experiment", choices=("lorenz", "tracking"), required=True)
    p.add_argument("--preset", choices=("paper", "classical"), default="classical")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="run the experiment in a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", action="store_true", help="also write per-run trajectory CSVs")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run with an inline lambda grid")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="plot metric CSVs from a run directory")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ApbmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
