"""Experiment configuration: scenario presets, JSON round-trip, seeding.

A config is plain data (floats, ints, strings, nested lists) so it can be
hashed, serialized, and shipped to worker processes; builder helpers turn it
into the typed objects the library consumes.  Child RNG seeds are derived
from the master seed and the run coordinates, never from the wall clock.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geometry import Environment, Reflector, enumerate_vts
from .gmphd import BirthParams
from .motion import AgentState, MotionParams
from .rbpf import FilterParams, WeightStrategy
from .simulate import SensorParams

__all__ = [
    "ExperimentConfig",
    "preset",
    "load_config",
    "save_config",
    "config_hash",
    "build_environment",
    "build_motion",
    "build_sensor",
    "build_birth",
    "build_filter_params",
    "build_init_state",
    "child_seed",
]

# seed-derivation roles
SEED_TRAJECTORY = 0
SEED_MEASUREMENTS = 1
SEED_FILTER = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, serializable description of one experiment."""

    name: str = "scenario1"
    anchor: tuple = (0.0, 0.0)
    reflectors: tuple = ()  # ((point_xy), (unit_normal_xy)) pairs
    scatterers: tuple = ()
    init_state: tuple = (0.0, 0.0, 1.0, 0.0, 0.3)
    trajectories: int = 10
    reps: int = 10
    steps: int = 375
    dt: float = 0.08
    sigma_x: float = 0.5
    sigma_y: float = 0.5
    sigma_b: float = 0.01
    sigma_d: float = 0.3
    sigma_theta_deg: float = 4.0
    sigma_d0: float = 0.05
    sigma_theta0_deg: float = 2.0
    p_detect: float = 0.95
    lambda_clutter: float = 0.02
    fov: float = 35.0
    range_max: float | None = None
    los_end_time: float = 6.0
    gamma: float = 0.7
    zeta: float = 0.1
    iota: float = 0.5
    xi: float = 0.3
    alpha_birth: float = 0.01
    num_particles: int = 1000
    strategy: str = "multi-feature"
    gate_threshold: float = 9.21
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    max_components: int = 100
    extract_threshold: float = 0.5
    ess_fraction: float = 0.5
    association_budget: int = 100_000
    engine: str = "batched"
    master_seed: int = 0
    vt_lambda_bias: float = 1.0
    vt_gate: float = 5.0

    def __post_init__(self):
        if self.trajectories < 1 or self.reps < 1 or self.steps < 1:
            raise ValueError("trajectories, reps, and steps must be >= 1")
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        object.__setattr__(
            self,
            "reflectors",
            tuple(
                (tuple(float(v) for v in p), tuple(float(v) for v in n))
                for p, n in self.reflectors
            ),
        )
        object.__setattr__(
            self,
            "scatterers",
            tuple(tuple(float(v) for v in s) for s in self.scatterers),
        )
        object.__setattr__(self, "init_state", tuple(float(v) for v in self.init_state))
        WeightStrategy(self.strategy)  # validate early


def _default_range_max(cfg: ExperimentConfig) -> float:
    """FOV radius plus the largest ground-truth VT bias (covers biased ranges)."""
    env = build_environment(cfg)
    vts = enumerate_vts(env)
    max_bias = max((vt.bias for vt in vts), default=0.0)
    return cfg.fov + max_bias


def preset(name: str) -> ExperimentConfig:
    """Built-in experiment presets."""
    if name == "scenario1":
        return ExperimentConfig(
            name="scenario1",
            anchor=(0.0, 0.0),
            reflectors=(((0.0, 10.0), (0.0, 1.0)),),
            scatterers=((10.0, -5.0),),
            init_state=(0.0, 0.0, 1.0, 0.0, 0.3),
            trajectories=10,
            reps=10,
            fov=35.0,
        )
    if name == "scenario2":
        return ExperimentConfig(
            name="scenario2",
            anchor=(0.0, 0.0),
            reflectors=(
                ((0.0, 5.0), (0.0, 1.0)),
                ((10.0, 0.0), (1.0, 0.0)),
            ),
            scatterers=((5.0, -5.0),),
            init_state=(8.0, -10.0, 0.0, 1.0, 0.3),
            trajectories=5,
            reps=10,
            fov=25.0,
        )
    raise ValueError(f"unknown preset {name!r}")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    data = {
        k: tuple(map(tuple, v)) if k == "reflectors" else tuple(v) if isinstance(v, list) else v
        for k, v in data.items()
    }
    return ExperimentConfig(**data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the canonical JSON form."""
    canon = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_environment(cfg: ExperimentConfig) -> Environment:
    return Environment(
        anchor=np.asarray(cfg.anchor),
        reflectors=tuple(Reflector(np.asarray(p), np.asarray(n)) for p, n in cfg.reflectors),
        scatterers=tuple(np.asarray(s) for s in cfg.scatterers),
    )


def build_motion(cfg: ExperimentConfig) -> MotionParams:
    return MotionParams(sigma_x=cfg.sigma_x, sigma_y=cfg.sigma_y, sigma_b=cfg.sigma_b, dt=cfg.dt)


def build_sensor(cfg: ExperimentConfig) -> SensorParams:
    range_max = cfg.range_max if cfg.range_max is not None else _default_range_max(cfg)
    return SensorParams(
        sigma_d=cfg.sigma_d,
        sigma_theta=math.radians(cfg.sigma_theta_deg),
        sigma_d0=cfg.sigma_d0,
        sigma_theta0=math.radians(cfg.sigma_theta0_deg),
        p_detect=cfg.p_detect,
        lambda_clutter=cfg.lambda_clutter,
        fov_radius=cfg.fov,
        range_max=range_max,
        los_end_time=cfg.los_end_time,
    )


def build_birth(cfg: ExperimentConfig) -> BirthParams:
    return BirthParams(
        gamma=cfg.gamma, zeta=cfg.zeta, iota=cfg.iota, xi=cfg.xi, alpha_birth=cfg.alpha_birth
    )


def build_filter_params(cfg: ExperimentConfig, num_particles: int | None = None) -> FilterParams:
    return FilterParams(
        num_particles=num_particles or cfg.num_particles,
        strategy=WeightStrategy(cfg.strategy),
        gate_threshold=cfg.gate_threshold,
        prune_threshold=cfg.prune_threshold,
        merge_threshold=cfg.merge_threshold,
        max_components=cfg.max_components,
        extract_threshold=cfg.extract_threshold,
        ess_fraction=cfg.ess_fraction,
        association_budget=cfg.association_budget,
    )


def build_init_state(cfg: ExperimentConfig) -> AgentState:
    x = cfg.init_state
    return AgentState(position=np.array(x[:2]), velocity=np.array(x[2:4]), bias=float(x[4]))


def child_seed(master_seed: int, role: int, traj: int, rep: int = 0) -> np.random.SeedSequence:
    """Deterministic per-run seed stream.

    Trajectories depend only on the trajectory index, so every repetition of
    a trajectory re-simulates the same ground-truth path with fresh
    measurement noise and filter randomness.
    """
    if role == SEED_TRAJECTORY:
        return np.random.SeedSequence(entropy=(int(master_seed), role, int(traj)))
    return np.random.SeedSequence(entropy=(int(master_seed), role, int(traj), int(rep)))


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    """Copy with selected fields replaced (None values are ignored)."""
    updates = {k: v for k, v in kwargs.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg


__all__.append("with_overrides")
__all__.extend(["SEED_TRAJECTORY", "SEED_MEASUREMENTS", "SEED_FILTER"])
