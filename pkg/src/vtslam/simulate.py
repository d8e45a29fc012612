"""Scenario simulator: ground-truth trajectories and RFS measurement scans.

Each scan bundles an optional LOS range-bearing pair (present only inside the
LOS time window and subject to missed detection) with an unordered, unlabeled
list of NLOS detections and clutter.  Origin labels are kept in a side
channel for evaluation; the filter-facing MeasurementSet carries none.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Environment,
    RangeBearing,
    VirtualTransmitter,
    predict_measurement,
    wrap_angle,
)
from .motion import AgentState, MotionParams, propagate, sample_noise

__all__ = [
    "SensorParams",
    "MeasurementSet",
    "CLUTTER_ORIGIN",
    "generate_trajectory",
    "in_fov",
    "generate_measurements",
    "generate_measurements_with_origins",
    "clutter_density",
]

#: origin label used in the evaluation side channel for false alarms
CLUTTER_ORIGIN = -1

_MIN_RANGE = 1e-9


@dataclass(frozen=True)
class SensorParams:
    """Detection, noise, clutter, and field-of-view parameters.

    ``range_max`` bounds the measurement space over which clutter is uniform
    and should cover the largest reachable biased range; ``los_end_time`` is
    the last instant (s) at which the LOS path exists.
    """

    sigma_d: float = 0.3
    sigma_theta: float = np.deg2rad(4.0)
    sigma_d0: float = 0.05
    sigma_theta0: float = np.deg2rad(2.0)
    p_detect: float = 0.95
    lambda_clutter: float = 0.02
    fov_radius: float = 35.0
    range_max: float = 35.0
    los_end_time: float = 6.0

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in [0, 1]")
        if min(self.sigma_d, self.sigma_theta, self.sigma_d0, self.sigma_theta0) < 0.0:
            raise ValueError("noise stds must be non-negative")
        if self.fov_radius <= 0.0 or self.range_max <= 0.0:
            raise ValueError("fov_radius and range_max must be positive")
        if self.lambda_clutter < 0.0:
            raise ValueError("lambda_clutter must be non-negative")


@dataclass(frozen=True)
class MeasurementSet:
    """One scan: optional LOS pair plus unordered NLOS/clutter pairs."""

    los: RangeBearing | None
    nlos: tuple[RangeBearing, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "nlos", tuple(self.nlos))


def generate_trajectory(
    init: AgentState, params: MotionParams, steps: int, rng: np.random.Generator
) -> list[AgentState]:
    """Roll the motion model forward; returns steps+1 states including init."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    traj = [init]
    for _ in range(steps):
        traj.append(propagate(traj[-1], sample_noise(rng, params), params.dt))
    return traj


def in_fov(agent_position, vt_position, fov_radius: float) -> bool:
    """Closed-ball FOV test on agent-to-VT Euclidean distance."""
    delta = np.asarray(vt_position, dtype=float) - np.asarray(agent_position, dtype=float)
    return bool(np.linalg.norm(delta) <= fov_radius)


def _noisy(rb: RangeBearing, sd: float, st: float, rng: np.random.Generator) -> RangeBearing:
    r = max(rb.range + rng.normal(0.0, sd), _MIN_RANGE)
    return RangeBearing(range=r, bearing=wrap_angle(rb.bearing + rng.normal(0.0, st)))


def generate_measurements_with_origins(
    traj: list[AgentState],
    env: Environment,
    vts: list[VirtualTransmitter],
    sensor: SensorParams,
    rng: np.random.Generator,
    dt: float,
) -> tuple[list[MeasurementSet], list[list[int]]]:
    """Generate one scan per step k = 1..len(traj)-1 with an origin side channel.

    ``origins[k-1]`` parallels the NLOS tuple of scan k and holds the index of
    the generating VT or CLUTTER_ORIGIN.  The NLOS list order is randomized so
    position in the list carries no information.
    """
    anchor = VirtualTransmitter(env.anchor, 0.0)
    scans: list[MeasurementSet] = []
    origins: list[list[int]] = []
    for k in range(1, len(traj)):
        state = traj[k]
        t = k * dt

        los = None
        if t <= sensor.los_end_time and rng.random() < sensor.p_detect:
            los_truth = predict_measurement(state.position, state.bias, anchor)
            los = _noisy(los_truth, sensor.sigma_d0, sensor.sigma_theta0, rng)

        nlos: list[RangeBearing] = []
        labels: list[int] = []
        for idx, vt in enumerate(vts):
            if not in_fov(state.position, vt.position, sensor.fov_radius):
                continue
            if rng.random() >= sensor.p_detect:
                continue
            truth = predict_measurement(state.position, state.bias, vt)
            nlos.append(_noisy(truth, sensor.sigma_d, sensor.sigma_theta, rng))
            labels.append(idx)
        for _ in range(rng.poisson(sensor.lambda_clutter)):
            nlos.append(
                RangeBearing(
                    range=max(rng.uniform(0.0, sensor.range_max), _MIN_RANGE),
                    bearing=wrap_angle(rng.uniform(-np.pi, np.pi)),
                )
            )
            labels.append(CLUTTER_ORIGIN)

        order = rng.permutation(len(nlos))
        scans.append(MeasurementSet(los=los, nlos=tuple(nlos[i] for i in order)))
        origins.append([labels[i] for i in order])
    return scans, origins


def generate_measurements(
    traj: list[AgentState],
    env: Environment,
    vts: list[VirtualTransmitter],
    sensor: SensorParams,
    rng: np.random.Generator,
    dt: float,
) -> list[MeasurementSet]:
    """Label-free measurement generation (filter-facing API)."""
    scans, _ = generate_measurements_with_origins(traj, env, vts, sensor, rng, dt)
    return scans


def clutter_density(z: RangeBearing, sensor: SensorParams) -> float:
    """Uniform clutter intensity over [0, range_max] x (-pi, pi], else zero."""
    if sensor.lambda_clutter == 0.0:
        return 0.0
    if not 0.0 <= z.range <= sensor.range_max:
        return 0.0
    return sensor.lambda_clutter / (sensor.range_max * 2.0 * np.pi)
