"""Experiment driver: paired SLAM/EKF runs, aggregation, and file outputs.

For every (trajectory, repetition) pair the runner derives child seeds from
the master seed, simulates ground truth and measurements once, and feeds the
identical measurement stream to the PHD-SLAM filter and the LOS-only EKF
baseline.  Aggregated metrics go to metrics.json (no wall-clock content, so
reruns are byte-identical); timings, versions, seeds, and numerical-event
counts go to manifest.json; figures are rendered under figures/.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    SEED_FILTER,
    SEED_MEASUREMENTS,
    SEED_TRAJECTORY,
    ExperimentConfig,
    build_birth,
    build_environment,
    build_filter_params,
    build_init_state,
    build_motion,
    build_sensor,
    child_seed,
    config_hash,
)
from .ekf import ekf_init, ekf_predict, ekf_update
from .geometry import VirtualTransmitter, enumerate_vts
from .gmphd import GaussianMixtureMap, map_to_json
from .metrics import error_cdf, localization_rmse, vt_rmse
from .rbpf import PhdSlamFilter
from .simulate import generate_measurements_with_origins, generate_trajectory

__all__ = ["SingleRunResult", "run_single", "run_experiment", "write_run_files"]


@dataclass
class SingleRunResult:
    """Plain-data outcome of one paired run (picklable across workers)."""

    traj: int
    rep: int
    slam_errors: list[float]
    ekf_errors: list[float]
    slam_map: list[dict]
    mixture: list[dict]
    events: dict
    seconds_per_step: float
    estimates_slam: list[list[float]] = field(default_factory=list)
    estimates_ekf: list[list[float]] = field(default_factory=list)


def _vt_to_dict(vt: VirtualTransmitter) -> dict:
    return {"x": float(vt.position[0]), "y": float(vt.position[1]), "bias": float(vt.bias)}


def run_single(cfg: ExperimentConfig, traj: int, rep: int) -> SingleRunResult:
    """Simulate one run and filter it with both methods on identical scans."""
    env = build_environment(cfg)
    vts = enumerate_vts(env)
    motion = build_motion(cfg)
    sensor = build_sensor(cfg)
    birth = build_birth(cfg)
    fparams = build_filter_params(cfg)
    init = build_init_state(cfg)

    rng_traj = np.random.default_rng(child_seed(cfg.master_seed, SEED_TRAJECTORY, traj))
    truth = generate_trajectory(init, motion, cfg.steps, rng_traj)
    rng_meas = np.random.default_rng(
        child_seed(cfg.master_seed, SEED_MEASUREMENTS, traj, rep)
    )
    scans, _ = generate_measurements_with_origins(truth, env, vts, sensor, rng_meas, cfg.dt)

    rng_filt = np.random.default_rng(child_seed(cfg.master_seed, SEED_FILTER, traj, rep))
    filt = PhdSlamFilter(
        init, env.anchor, motion, sensor, birth, fparams, rng=rng_filt, engine=cfg.engine
    )

    slam_errors: list[float] = []
    est_rows: list[list[float]] = []
    t0 = time.perf_counter()
    last_vts: list[VirtualTransmitter] = []
    for k, scan in enumerate(scans, start=1):
        result = filt.step(scan)
        last_vts = result.vts
        tp = truth[k].position
        err = float(np.hypot(result.agent.position[0] - tp[0], result.agent.position[1] - tp[1]))
        slam_errors.append(err)
        est_rows.append(
            [k, *result.agent.as_vector().tolist(), float(tp[0]), float(tp[1]), err]
        )
    seconds_per_step = (time.perf_counter() - t0) / max(len(scans), 1)

    ekf_errors: list[float] = []
    ekf_rows: list[list[float]] = []
    state = ekf_init(init.as_vector())
    for k, scan in enumerate(scans, start=1):
        state = ekf_predict(state, motion)
        state = ekf_update(state, scan.los, env.anchor, sensor)
        tp = truth[k].position
        err = float(np.hypot(state.mean[0] - tp[0], state.mean[1] - tp[1]))
        ekf_errors.append(err)
        ekf_rows.append([k, *state.mean.tolist(), float(tp[0]), float(tp[1]), err])

    snap = filt.snapshot()
    best = int(np.argmax(snap["weights"]))
    w, mu, cov = snap["maps"][best]
    mixture = map_to_json(
        GaussianMixtureMap(w, mu, cov) if len(w) else GaussianMixtureMap.empty()
    )
    events = asdict(filt.total_events)

    return SingleRunResult(
        traj=traj,
        rep=rep,
        slam_errors=slam_errors,
        ekf_errors=ekf_errors,
        slam_map=[_vt_to_dict(v) for v in last_vts],
        mixture=mixture,
        events=events,
        seconds_per_step=seconds_per_step,
        estimates_slam=est_rows,
        estimates_ekf=ekf_rows,
    )


def _run_pair(cfg_data: dict, traj: int, rep: int) -> SingleRunResult:
    """Worker entry point (configs travel as plain dicts)."""
    cfg = ExperimentConfig(
        **{
            k: tuple(map(tuple, v))
            if k == "reflectors"
            else tuple(v)
            if isinstance(v, list)
            else v
            for k, v in cfg_data.items()
        }
    )
    return run_single(cfg, traj, rep)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_run_files(out: Path, cfg: ExperimentConfig, result: SingleRunResult) -> None:
    """Per-run estimate logs and the final map."""
    out.mkdir(parents=True, exist_ok=True)
    header = ["step", "est_x", "est_y", "est_vx", "est_vy", "est_b", "true_x", "true_y", "error"]
    _write_csv(out / "estimates_slam.csv", header, result.estimates_slam)
    _write_csv(out / "estimates_ekf.csv", header, result.estimates_ekf)
    with open(out / "map.json", "w") as fh:
        json.dump(
            {"vts": result.slam_map, "mixture": result.mixture}, fh, indent=2, sort_keys=True
        )
        fh.write("\n")


def write_simulation_files(out: Path, cfg: ExperimentConfig, traj: int, rep: int) -> None:
    """Ground truth and measurement stream for one run."""
    out.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    vts = enumerate_vts(env)
    motion = build_motion(cfg)
    sensor = build_sensor(cfg)
    init = build_init_state(cfg)
    rng_traj = np.random.default_rng(child_seed(cfg.master_seed, SEED_TRAJECTORY, traj))
    truth = generate_trajectory(init, motion, cfg.steps, rng_traj)
    rng_meas = np.random.default_rng(
        child_seed(cfg.master_seed, SEED_MEASUREMENTS, traj, rep)
    )
    scans, _ = generate_measurements_with_origins(truth, env, vts, sensor, rng_meas, cfg.dt)
    _write_csv(
        out / "truth.csv",
        ["step", "x", "y", "vx", "vy", "b"],
        [[k, *s.as_vector().tolist()] for k, s in enumerate(truth)],
    )
    rows = []
    for k, scan in enumerate(scans, start=1):
        if scan.los is not None:
            rows.append([k, "los", scan.los.range, scan.los.bearing])
        for z in scan.nlos:
            rows.append([k, "nlos", z.range, z.bearing])
    _write_csv(out / "measurements.csv", ["step", "type", "range", "bearing"], rows)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    threads: int = 1,
    write_runs: bool = False,
    figures: bool = True,
) -> dict:
    """Run the full (trajectories x reps) grid and aggregate metrics."""
    pairs = [(t, r) for t in range(cfg.trajectories) for r in range(cfg.reps)]
    wall_start = time.perf_counter()
    results: dict[tuple[int, int], SingleRunResult] = {}
    if threads > 1 and len(pairs) > 1:
        cfg_data = asdict(cfg)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                pair: pool.submit(_run_pair, cfg_data, *pair) for pair in pairs
            }
            for pair, fut in futures.items():
                results[pair] = fut.result()
    else:
        for pair in pairs:
            results[pair] = run_single(cfg, *pair)
    wall_total = time.perf_counter() - wall_start

    env = build_environment(cfg)
    truth_vts = enumerate_vts(env)
    ordered = [results[p] for p in pairs]
    slam_all = [np.asarray(r.slam_errors) for r in ordered]
    ekf_all = [np.asarray(r.ekf_errors) for r in ordered]
    maps = [
        [VirtualTransmitter(np.array([d["x"], d["y"]]), d["bias"]) for d in r.slam_map]
        for r in ordered
    ]
    report = vt_rmse(maps, truth_vts, cfg.vt_lambda_bias, cfg.vt_gate)
    metrics = {
        "config_hash": config_hash(cfg),
        "scenario": cfg.name,
        "runs": len(pairs),
        "slam_rmse": localization_rmse(slam_all),
        "ekf_rmse": localization_rmse(ekf_all),
        "per_run_slam_rmse": [localization_rmse(e) for e in slam_all],
        "per_run_ekf_rmse": [localization_rmse(e) for e in ekf_all],
        "slam_cdf": error_cdf(np.concatenate(slam_all)),
        "ekf_cdf": error_cdf(np.concatenate(ekf_all)),
        "vt_table": report.as_table(),
        "vt_spurious": report.spurious,
        "truth_vts": [_vt_to_dict(v) for v in truth_vts],
    }
    metrics["rmse_ratio"] = metrics["slam_rmse"] / metrics["ekf_rmse"]

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest = {
            "config": asdict(cfg),
            "config_hash": config_hash(cfg),
            "package_version": __version__,
            "numpy_version": np.__version__,
            "seeds": {
                f"{t}/{r}": {
                    "trajectory": child_seed(cfg.master_seed, SEED_TRAJECTORY, t).entropy,
                    "measurements": child_seed(cfg.master_seed, SEED_MEASUREMENTS, t, r).entropy,
                    "filter": child_seed(cfg.master_seed, SEED_FILTER, t, r).entropy,
                }
                for t, r in pairs
            },
            "seconds_per_step": {f"{t}/{r}": results[(t, r)].seconds_per_step for t, r in pairs},
            "events": {f"{t}/{r}": results[(t, r)].events for t, r in pairs},
            "wall_seconds": wall_total,
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if write_runs:
            for t, r in pairs:
                write_run_files(out / "runs" / f"traj{t:02d}_rep{r:02d}", cfg, results[(t, r)])
        if figures:
            from . import plots

            fig_dir = out / "figures"
            fig_dir.mkdir(exist_ok=True)
            first = results[pairs[0]]
            plots.plot_trajectory(
                cfg, first, fig_dir / "trajectory.png"
            )
            plots.plot_cdf(
                metrics["slam_cdf"], metrics["ekf_cdf"], fig_dir / "cdf.png"
            )
            plots.plot_map(cfg, truth_vts, first, fig_dir / "map.png")
    return metrics
