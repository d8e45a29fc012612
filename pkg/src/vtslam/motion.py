"""Agent kinematics: constant-velocity model with a drifting ranging bias.

State layout is the 5-vector (x, y, vx, vy, b).  The same transition
matrices drive the simulator, the particle proposal, and the EKF baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AgentState",
    "MotionParams",
    "transition_matrices",
    "propagate",
    "sample_noise",
]


@dataclass(frozen=True)
class AgentState:
    """Agent kinematic state: position (m), velocity (m/s), ranging bias (m)."""

    position: np.ndarray
    velocity: np.ndarray
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        vec = self.as_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("agent state components must be finite")

    def as_vector(self) -> np.ndarray:
        return np.array([*self.position, *self.velocity, self.bias])

    @classmethod
    def from_vector(cls, x) -> "AgentState":
        x = np.asarray(x, dtype=float)
        return cls(position=x[:2], velocity=x[2:4], bias=float(x[4]))


@dataclass(frozen=True)
class MotionParams:
    """Process-noise stds (accelerations in m/s^2, bias drift in m/s) and step."""

    sigma_x: float = 0.5
    sigma_y: float = 0.5
    sigma_b: float = 0.01
    dt: float = 0.08

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if min(self.sigma_x, self.sigma_y, self.sigma_b) < 0.0:
            raise ValueError("noise stds must be non-negative")

    @property
    def noise_std(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_y, self.sigma_b])


def transition_matrices(dt: float):
    """Transition matrices (A, B) of the constant-velocity-plus-bias model.

    A propagates (x, y, vx, vy, b) by one step; B injects the noise vector
    (u_x, u_y, u_b): accelerations integrate as dt^2/2 into position and dt
    into velocity, bias drift integrates as dt.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    A = np.eye(5)
    A[0, 2] = dt
    A[1, 3] = dt
    half = 0.5 * dt * dt
    B = np.array([
        [half, 0.0, 0.0],
        [0.0, half, 0.0],
        [dt, 0.0, 0.0],
        [0.0, dt, 0.0],
        [0.0, 0.0, dt],
    ])
    return A, B


def propagate(state: AgentState, noise, dt: float) -> AgentState:
    """One motion step: x' = A x + B n."""
    A, B = transition_matrices(dt)
    return AgentState.from_vector(A @ state.as_vector() + B @ np.asarray(noise, dtype=float))


def sample_noise(rng: np.random.Generator, params: MotionParams) -> np.ndarray:
    """Draw the 3-vector of independent zero-mean process-noise terms."""
    return rng.normal(0.0, params.noise_std)
