"""Multipath-assisted SLAM with per-particle Gaussian-mixture feature maps.

A Rao-Blackwellized particle filter tracks an agent from range/bearing
measurements to one physical anchor and its multipath virtual transmitters;
each particle carries a Gaussian-mixture intensity over virtual-transmitter
states (2-D position plus propagation bias).  A LOS-only EKF serves as the
baseline, and a scenario simulator plus CLI drive reproducible experiments.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, config_hash, load_config, preset, save_config
from .ekf import EkfState, ekf_init, ekf_predict, ekf_update
from .geometry import (
    Environment,
    RangeBearing,
    Reflector,
    VirtualTransmitter,
    enumerate_vts,
    measurement_jacobians,
    mirror_point,
    predict_measurement,
    wrap_angle,
)
from .gmphd import (
    BirthParams,
    GaussianComponent,
    GaussianMixtureMap,
    birth_component,
    extract_map,
    gate,
    predict,
    prune_merge,
    update,
    update_with_stats,
)
from .metrics import error_cdf, localization_rmse, match_vts, vt_rmse
from .motion import AgentState, MotionParams, propagate, transition_matrices
from .rbpf import (
    FilterParams,
    Particle,
    PhdSlamFilter,
    WeightStrategy,
    effective_sample_size,
    systematic_resample,
)
from .simulate import (
    MeasurementSet,
    SensorParams,
    clutter_density,
    generate_measurements,
    generate_trajectory,
    in_fov,
)

__all__ = [
    "__version__",
    "AgentState",
    "BirthParams",
    "EkfState",
    "Environment",
    "ExperimentConfig",
    "FilterParams",
    "GaussianComponent",
    "GaussianMixtureMap",
    "MeasurementSet",
    "MotionParams",
    "Particle",
    "PhdSlamFilter",
    "RangeBearing",
    "Reflector",
    "SensorParams",
    "VirtualTransmitter",
    "WeightStrategy",
    "birth_component",
    "clutter_density",
    "config_hash",
    "effective_sample_size",
    "ekf_init",
    "ekf_predict",
    "ekf_update",
    "enumerate_vts",
    "error_cdf",
    "extract_map",
    "gate",
    "generate_measurements",
    "generate_trajectory",
    "in_fov",
    "load_config",
    "localization_rmse",
    "match_vts",
    "measurement_jacobians",
    "mirror_point",
    "predict",
    "predict_measurement",
    "preset",
    "prune_merge",
    "propagate",
    "save_config",
    "systematic_resample",
    "transition_matrices",
    "update",
    "update_with_stats",
    "vt_rmse",
    "wrap_angle",
]
