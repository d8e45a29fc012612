"""LOS-only extended Kalman filter over the 5-D agent state (baseline).

Tracks (x, y, vx, vy, b) from anchor range-bearing measurements alone.  After
the LOS path disappears the filter coasts on the motion model, so its error
grows — that contrast is the point of the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RangeBearing, wrap_angle
from .motion import MotionParams, transition_matrices
from .simulate import SensorParams

__all__ = ["EkfState", "ekf_init", "ekf_predict", "ekf_update"]


@dataclass(frozen=True)
class EkfState:
    """Gaussian belief over the agent state."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(5).copy()
        cov = np.asarray(self.covariance, dtype=float).reshape(5, 5).copy()
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def ekf_init(init_vector, variance: float = 1e-4) -> EkfState:
    """Belief at the exactly-known initial state (small diagonal covariance)."""
    return EkfState(np.asarray(init_vector, dtype=float), variance * np.eye(5))


def ekf_predict(state: EkfState, params: MotionParams) -> EkfState:
    """Time update under the constant-velocity-plus-bias model."""
    A, B = transition_matrices(params.dt)
    mean = A @ state.mean
    q = B @ np.diag(params.noise_std**2) @ B.T
    cov = A @ state.covariance @ A.T + q
    return EkfState(mean, 0.5 * (cov + cov.T))


def ekf_update(state: EkfState, z0: RangeBearing | None, anchor, sensor: SensorParams) -> EkfState:
    """Joseph-form measurement update with the LOS range-bearing pair.

    Returns the prediction unchanged when no LOS measurement is available.
    """
    if z0 is None:
        return state
    anchor = np.asarray(anchor, dtype=float)
    mean, cov = state.mean, state.covariance
    delta = anchor - mean[:2]
    d2 = float(delta @ delta)
    dist = math.sqrt(d2)
    if dist < 1e-12:
        return state
    rhat = dist + mean[4]
    bhat = math.atan2(delta[1], delta[0])
    h = np.array(
        [
            [-delta[0] / dist, -delta[1] / dist, 0.0, 0.0, 1.0],
            [delta[1] / d2, -delta[0] / d2, 0.0, 0.0, 0.0],
        ]
    )
    r = np.diag([sensor.sigma_d0**2, sensor.sigma_theta0**2])
    nu = np.array([z0.range - rhat, wrap_angle(z0.bearing - bhat)])
    s = h @ cov @ h.T + r
    k = cov @ h.T @ np.linalg.inv(s)
    new_mean = mean + k @ nu
    ikh = np.eye(5) - k @ h
    new_cov = ikh @ cov @ ikh.T + k @ r @ k.T
    return EkfState(new_mean, 0.5 * (new_cov + new_cov.T))
