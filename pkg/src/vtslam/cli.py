"""Command-line front end.

Subcommands:
  simulate   write ground truth + measurement stream for one run
  filter     run both filters on one simulated run, write estimate logs
  evaluate   recompute metrics from stored estimate logs
  run        full Monte Carlo experiment with metrics, manifest, figures
  sweep      strategy ablation on identical seeds (paired comparison)
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    build_environment,
    load_config,
    preset,
    save_config,
    with_overrides,
)
from .geometry import VirtualTransmitter, enumerate_vts
from .metrics import error_cdf, localization_rmse, vt_rmse
from .rbpf import WeightStrategy
from .runner import run_experiment, run_single, write_run_files, write_simulation_files

STRATEGY_CHOICES = [s.value for s in WeightStrategy]
SWEEP_DEFAULT = ["multi-feature", "empty-set", "closed-form"]


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=["scenario1", "scenario2"], default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON config file")


def _override_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--strategy", choices=STRATEGY_CHOICES, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--engine", choices=["batched", "reference"], default=None)


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset or "scenario1")
    return with_overrides(
        cfg,
        master_seed=args.seed,
        num_particles=getattr(args, "particles", None),
        strategy=getattr(args, "strategy", None),
        steps=getattr(args, "steps", None),
        trajectories=getattr(args, "trajectories", None),
        reps=getattr(args, "reps", None),
        engine=getattr(args, "engine", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtslam",
        description="Multipath-assisted SLAM with per-particle Gaussian-mixture maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write truth.csv and measurements.csv")
    _config_args(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--traj", type=int, default=0, help="trajectory index")
    p.add_argument("--rep", type=int, default=0, help="repetition index")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("filter", help="run SLAM + EKF on one simulated run")
    _config_args(p)
    _override_args(p)
    p.add_argument("--traj", type=int, default=0)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="recompute metrics from stored estimate logs")
    _config_args(p)
    p.add_argument("--runs", type=Path, required=True, help="experiment or run directory")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("run", help="full Monte Carlo experiment")
    _config_args(p)
    _override_args(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--write-runs", action="store_true", help="keep per-run estimate logs")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("sweep", help="strategy ablation on identical seeds")
    _config_args(p)
    _override_args(p)
    p.add_argument(
        "--strategies", nargs="+", choices=STRATEGY_CHOICES, default=SWEEP_DEFAULT
    )
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    write_simulation_files(args.out, cfg, args.traj, args.rep)
    print(f"wrote {args.out}/truth.csv and measurements.csv ({cfg.steps} steps)")
    return 0


def _cmd_filter(args) -> int:
    cfg = _resolve_config(args)
    result = run_single(cfg, args.traj, args.rep)
    write_simulation_files(args.out, cfg, args.traj, args.rep)
    write_run_files(args.out, cfg, result)
    save_config(cfg, args.out / "config.json")
    print(f"slam rmse: {localization_rmse(np.asarray(result.slam_errors)):.3f} m")
    print(f"ekf  rmse: {localization_rmse(np.asarray(result.ekf_errors)):.3f} m")
    print(f"map size:  {len(result.slam_map)} VTs")
    return 0


def _read_errors(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["error"]) for r in rows])


def _cmd_evaluate(args) -> int:
    root = args.runs
    manifest = root / "manifest.json"
    if args.config is None and args.preset is None and manifest.exists():
        with open(manifest) as fh:
            data = json.load(fh)["config"]
        cfg = ExperimentConfig(
            **{
                k: tuple(map(tuple, v))
                if k == "reflectors"
                else tuple(v)
                if isinstance(v, list)
                else v
                for k, v in data.items()
            }
        )
    else:
        cfg = _resolve_config(args)
    run_dirs = sorted((root / "runs").glob("traj*_rep*")) if (root / "runs").is_dir() else []
    if not run_dirs and (root / "estimates_slam.csv").exists():
        run_dirs = [root]
    if not run_dirs:
        raise FileNotFoundError(f"no estimate logs under {root}")
    slam_all, ekf_all, maps = [], [], []
    for d in run_dirs:
        slam_all.append(_read_errors(d / "estimates_slam.csv"))
        ekf_all.append(_read_errors(d / "estimates_ekf.csv"))
        with open(d / "map.json") as fh:
            entries = json.load(fh)["vts"]
        maps.append(
            [VirtualTransmitter(np.array([e["x"], e["y"]]), e["bias"]) for e in entries]
        )
    truth_vts = enumerate_vts(build_environment(cfg))
    report = vt_rmse(maps, truth_vts, cfg.vt_lambda_bias, cfg.vt_gate)
    metrics = {
        "runs": len(run_dirs),
        "slam_rmse": localization_rmse(slam_all),
        "ekf_rmse": localization_rmse(ekf_all),
        "slam_cdf": error_cdf(np.concatenate(slam_all)),
        "ekf_cdf": error_cdf(np.concatenate(ekf_all)),
        "vt_table": report.as_table(),
        "vt_spurious": report.spurious,
    }
    metrics["rmse_ratio"] = metrics["slam_rmse"] / metrics["ekf_rmse"]
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "metrics.json", "w") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"runs: {len(run_dirs)}")
    print(f"slam rmse: {metrics['slam_rmse']:.3f} m")
    print(f"ekf  rmse: {metrics['ekf_rmse']:.3f} m")
    for row in metrics["vt_table"]:
        rmse = "missed" if row["rmse"] is None else f"{row['rmse']:.3f} m"
        print(f"  VT ({row['x']:7.2f},{row['y']:7.2f}) b={row['bias']:6.2f}: {rmse}")
    return 0


def _print_summary(metrics: dict) -> None:
    print(f"slam rmse: {metrics['slam_rmse']:.3f} m")
    print(f"ekf  rmse: {metrics['ekf_rmse']:.3f} m  (ratio {metrics['rmse_ratio']:.1%})")
    for row in metrics["vt_table"]:
        rmse = "missed" if row["rmse"] is None else f"{row['rmse']:.3f} m"
        print(f"  VT ({row['x']:7.2f},{row['y']:7.2f}) b={row['bias']:6.2f}: {rmse}")


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    metrics = run_experiment(
        cfg,
        out_dir=args.out,
        threads=args.threads,
        write_runs=args.write_runs,
        figures=not args.no_figures,
    )
    save_config(cfg, args.out / "config.json")
    print(f"{cfg.name}: {metrics['runs']} runs -> {args.out}")
    _print_summary(metrics)
    return 0


def _cmd_sweep(args) -> int:
    base = _resolve_config(args)
    results: dict[str, dict] = {}
    for name in args.strategies:
        cfg = with_overrides(base, strategy=name)
        results[name] = run_experiment(
            cfg,
            out_dir=args.out / name,
            threads=args.threads,
            figures=not args.no_figures,
        )
        print(f"{name}: rmse {results[name]['slam_rmse']:.3f} m")
    comparison = {}
    names = list(args.strategies)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ra = np.asarray(results[a]["per_run_slam_rmse"])
            rb = np.asarray(results[b]["per_run_slam_rmse"])
            comparison[f"{a}<={b}"] = float(np.mean(ra <= rb))
    summary = {
        "rmse": {n: results[n]["slam_rmse"] for n in names},
        "per_run_rmse": {n: results[n]["per_run_slam_rmse"] for n in names},
        "paired_fraction": comparison,
    }
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "sweep.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, frac in comparison.items():
        print(f"paired {key}: {frac:.0%} of runs")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "filter": _cmd_filter,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # surface a one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
