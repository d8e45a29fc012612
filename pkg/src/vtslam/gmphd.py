"""Gaussian-mixture PHD map over virtual-transmitter states.

A map is a weighted mixture of 3-D Gaussians on (x_vt, y_vt, bias).  The
module provides the per-map pipeline: measurement-driven birth, predict
(static landmarks, so prediction is birth concatenation), coarse gating,
the PHD corrector with EKF component refinement, pruning/merging, and
estimate extraction.  One map is owned by exactly one particle; all
operations return new maps and never mutate shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    RangeBearing,
    VirtualTransmitter,
    measurement_jacobians,
    predict_measurement,
    wrap_angle,
)
from .motion import AgentState
from .simulate import SensorParams, clutter_density, in_fov

__all__ = [
    "GaussianComponent",
    "GaussianMixtureMap",
    "BirthParams",
    "GateResult",
    "UpdateStats",
    "birth_rotation",
    "birth_component",
    "predict",
    "gate",
    "update",
    "update_with_stats",
    "component_likelihood",
    "detection_probability",
    "prune_merge",
    "extract_map",
    "map_to_json",
    "map_from_json",
]

_SQRT2 = math.sqrt(2.0)
_JITTER0 = 1e-12
_JITTER_TRIES = 10


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian over a VT state (x, y, bias)."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(3).copy()
        cov = np.asarray(self.covariance, dtype=float).reshape(3, 3).copy()
        if not (np.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError("weight must be finite and non-negative")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)  # SPD check; raises LinAlgError otherwise
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass
class GaussianMixtureMap:
    """Array-backed Gaussian mixture: weights (M,), means (M,3), covs (M,3,3)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.means = np.asarray(self.means, dtype=float).reshape(len(self.weights), 3)
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(
            len(self.weights), 3, 3
        )
        if np.any(self.weights < 0.0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and non-negative")
        if not np.all(np.isfinite(self.means)) or not np.all(np.isfinite(self.covariances)):
            raise ValueError("means and covariances must be finite")

    @classmethod
    def empty(cls) -> "GaussianMixtureMap":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3)))

    @classmethod
    def from_components(cls, components) -> "GaussianMixtureMap":
        comps = list(components)
        if not comps:
            return cls.empty()
        return cls(
            np.array([c.weight for c in comps]),
            np.stack([c.mean for c in comps]),
            np.stack([c.covariance for c in comps]),
        )

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(w, m, c)
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self) -> int:
        return len(self.weights)

    def copy(self) -> "GaussianMixtureMap":
        return GaussianMixtureMap(
            self.weights.copy(), self.means.copy(), self.covariances.copy()
        )


@dataclass(frozen=True)
class BirthParams:
    """Adaptive-birth shape parameters.

    gamma splits the biased range between geometric distance and bias; zeta,
    iota, xi scale the birth covariance along the range, bearing, and bias
    principal axes; alpha_birth is the weight of every birth component.
    """

    gamma: float = 0.7
    zeta: float = 0.1
    iota: float = 0.5
    xi: float = 0.3
    alpha_birth: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if min(self.zeta, self.iota, self.xi) < 0.0:
            raise ValueError("zeta, iota, xi must be non-negative")
        if self.alpha_birth <= 0.0:
            raise ValueError("alpha_birth must be positive")


@dataclass(frozen=True)
class GateResult:
    """Boolean pass matrix (components x measurements) plus unmatched columns."""

    matrix: np.ndarray
    unmatched: tuple[int, ...]

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(j), int(l)) for j, l in zip(*np.nonzero(self.matrix))]


@dataclass(frozen=True)
class UpdateStats:
    """Bookkeeping from one corrector call (for invariant checks and logs)."""

    missed_mass: float
    measurement_weight_sums: tuple[float, ...]
    bias_clamp_count: int
    cov_repair_count: int


def birth_rotation(theta: float) -> np.ndarray:
    """Rotation aligning birth covariance axes with the measurement ray."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [c / _SQRT2, -s, c / _SQRT2],
            [s / _SQRT2, c, s / _SQRT2],
            [-1.0 / _SQRT2, 0.0, 1.0 / _SQRT2],
        ]
    )


def birth_component(
    z: RangeBearing,
    prev_state: AgentState,
    bp: BirthParams,
    sensor: SensorParams,
) -> GaussianComponent | None:
    """Build a birth component from an unmatched measurement, or None.

    The mean puts the VT at distance gamma*(d - b_agent) along the measured
    bearing and assigns the leftover range to the VT bias, so the biased-range
    constraint holds with zero residual.  Returns None when the measured range
    does not exceed the agent bias (no admissible VT).
    """
    d, theta = z.range, z.bearing
    slack = d - prev_state.bias
    if slack <= 0.0:
        return None
    dist = bp.gamma * slack
    mean = np.array(
        [
            prev_state.position[0] + dist * math.cos(theta),
            prev_state.position[1] + dist * math.sin(theta),
            (1.0 - bp.gamma) * slack,
        ]
    )
    sig = np.diag(
        [
            bp.zeta * slack**2,
            bp.iota * slack**2 * sensor.sigma_theta**2,
            bp.xi * sensor.sigma_d**2,
        ]
    )
    t = birth_rotation(theta)
    cov = t @ sig @ t.T
    cov = 0.5 * (cov + cov.T)
    return GaussianComponent(bp.alpha_birth, mean, cov)


def predict(
    gm: GaussianMixtureMap,
    births: list[GaussianComponent],
    cap: int | None = None,
    prune_threshold: float = 1e-5,
    merge_threshold: float = 4.0,
) -> GaussianMixtureMap:
    """Concatenate prior components with births (landmarks are static).

    If a cap is given and the concatenation exceeds it, prune/merge runs
    before returning.
    """
    if not births:
        out = gm.copy()
    else:
        bm = GaussianMixtureMap.from_components(births)
        out = GaussianMixtureMap(
            np.concatenate([gm.weights, bm.weights]),
            np.concatenate([gm.means, bm.means]),
            np.concatenate([gm.covariances, bm.covariances]),
        )
    if cap is not None and len(out) > cap:
        out = prune_merge(out, prune_threshold, merge_threshold, cap)
    return out


def detection_probability(agent_position, vt_position, sensor: SensorParams) -> float:
    """p_detect inside the FOV ball, 0 outside."""
    return sensor.p_detect if in_fov(agent_position, vt_position, sensor.fov_radius) else 0.0


def _linearize(mean: np.ndarray, agent: AgentState, sensor: SensorParams):
    """Predicted measurement, Jacobian, and innovation covariance for one mean."""
    vt = VirtualTransmitter(mean[:2], max(mean[2], 0.0))
    zhat = predict_measurement(agent.position, agent.bias, vt)
    h_vt, _ = measurement_jacobians(agent.position, vt)
    r = np.diag([sensor.sigma_d**2, sensor.sigma_theta**2])
    return zhat, h_vt, r


def _innovation(z: RangeBearing, zhat: RangeBearing) -> np.ndarray:
    return np.array([z.range - zhat.range, wrap_angle(z.bearing - zhat.bearing)])


def component_likelihood(
    gc: GaussianComponent, z: RangeBearing, agent: AgentState, sensor: SensorParams
) -> float:
    """Gaussian density of the wrapped innovation under the linearized model."""
    zhat, h, r = _linearize(gc.mean, agent, sensor)
    s = h @ gc.covariance @ h.T + r
    nu = _innovation(z, zhat)
    sol = np.linalg.solve(s, nu)
    maha = float(nu @ sol)
    det = float(np.linalg.det(s))
    return math.exp(-0.5 * maha) / (2.0 * math.pi * math.sqrt(det))


def gate(
    gm: GaussianMixtureMap,
    measurements: list[RangeBearing],
    agent: AgentState,
    sensor: SensorParams,
    gate_threshold: float = 9.21,
) -> GateResult:
    """Chi-square gate on the squared Mahalanobis innovation, bearing wrapped."""
    if gate_threshold <= 0.0:
        raise ValueError("gate_threshold must be positive")
    m, L = len(gm), len(measurements)
    matrix = np.zeros((m, L), dtype=bool)
    for j in range(m):
        zhat, h, r = _linearize(gm.means[j], agent, sensor)
        s = h @ gm.covariances[j] @ h.T + r
        s_inv = np.linalg.inv(s)
        for l, z in enumerate(measurements):
            nu = _innovation(z, zhat)
            if float(nu @ s_inv @ nu) <= gate_threshold:
                matrix[j, l] = True
    unmatched = tuple(l for l in range(L) if not matrix[:, l].any())
    return GateResult(matrix, unmatched)


def _repair_spd(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrize and, if needed, jitter a covariance until Cholesky succeeds."""
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
        return cov, False
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER0
    for _ in range(_JITTER_TRIES):
        candidate = cov + jitter * np.eye(3)
        try:
            np.linalg.cholesky(candidate)
            return candidate, True
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("covariance could not be repaired to SPD")


def update_with_stats(
    gm: GaussianMixtureMap,
    measurements: list[RangeBearing],
    agent: AgentState,
    sensor: SensorParams,
    gate_result: GateResult | None = None,
) -> tuple[GaussianMixtureMap, UpdateStats]:
    """PHD corrector: missed-detection copies plus EKF-corrected components.

    Detected weights follow the standard corrector ratio with the clutter
    intensity in the denominator; gating (when provided) restricts both the
    numerator terms and the denominator sum.  Component order in the output is
    all missed copies, then corrected components grouped by measurement.
    """
    m, L = len(gm), len(measurements)
    if gate_result is None:
        gate_matrix = np.ones((m, L), dtype=bool)
    else:
        gate_matrix = gate_result.matrix
        if gate_matrix.shape != (m, L):
            raise ValueError("gate matrix shape mismatch")

    pd = np.array(
        [detection_probability(agent.position, mu[:2], sensor) for mu in gm.means]
    )

    out_w = [gm.weights * (1.0 - pd)]
    out_mu = [gm.means.copy()]
    out_cov = [gm.covariances.copy()]

    clamp_count = 0
    repair_count = 0

    # Per-component EKF pieces are measurement-independent: the gain, the
    # corrected covariance, and the innovation covariance depend only on the
    # prior component and the agent state.
    zhats, gains, covs_corr, s_invs, s_dets = [], [], [], [], []
    for j in range(m):
        zhat, h, r = _linearize(gm.means[j], agent, sensor)
        c = gm.covariances[j]
        s = h @ c @ h.T + r
        s_inv = np.linalg.inv(s)
        k = c @ h.T @ s_inv
        ikh = np.eye(3) - k @ h
        cj = ikh @ c @ ikh.T + k @ r @ k.T
        cj, repaired = _repair_spd(cj)
        repair_count += int(repaired)
        zhats.append(zhat)
        gains.append(k)
        covs_corr.append(cj)
        s_invs.append(s_inv)
        s_dets.append(float(np.linalg.det(s)))

    weight_sums = []
    for l, z in enumerate(measurements):
        idx = np.nonzero(gate_matrix[:, l])[0]
        nums = []
        mus = []
        covs = []
        for j in idx:
            nu = _innovation(z, zhats[j])
            q = math.exp(-0.5 * float(nu @ s_invs[j] @ nu)) / (
                2.0 * math.pi * math.sqrt(s_dets[j])
            )
            mu = gm.means[j] + gains[j] @ nu
            if mu[2] < 0.0:
                mu = mu.copy()
                mu[2] = 0.0
                clamp_count += 1
            nums.append(pd[j] * gm.weights[j] * q)
            mus.append(mu)
            covs.append(covs_corr[j])
        nums = np.asarray(nums)
        denom = clutter_density(z, sensor) + float(np.sum(nums))
        if denom > 0.0 and len(nums):
            w = nums / denom
            out_w.append(w)
            out_mu.append(np.stack(mus))
            out_cov.append(np.stack(covs))
            weight_sums.append(float(np.sum(w)))
        else:
            weight_sums.append(0.0)

    updated = GaussianMixtureMap(
        np.concatenate(out_w) if out_w else np.zeros(0),
        np.concatenate(out_mu) if out_mu else np.zeros((0, 3)),
        np.concatenate(out_cov) if out_cov else np.zeros((0, 3, 3)),
    )
    stats = UpdateStats(
        missed_mass=float(np.sum(gm.weights * (1.0 - pd))),
        measurement_weight_sums=tuple(weight_sums),
        bias_clamp_count=clamp_count,
        cov_repair_count=repair_count,
    )
    return updated, stats


def update(
    gm: GaussianMixtureMap,
    measurements: list[RangeBearing],
    agent: AgentState,
    sensor: SensorParams,
    gate_result: GateResult | None = None,
) -> GaussianMixtureMap:
    """PHD corrector (see update_with_stats)."""
    return update_with_stats(gm, measurements, agent, sensor, gate_result)[0]


def prune_merge(
    gm: GaussianMixtureMap,
    prune_threshold: float = 1e-5,
    merge_threshold: float = 4.0,
    cap: int = 100,
) -> GaussianMixtureMap:
    """Drop weak components, merge near-coincident ones, enforce the cap.

    Merging is moment-preserving.  Capping keeps the strongest components and
    rescales them so the total mass changes only through pruning.
    """
    if prune_threshold <= 0.0 or merge_threshold <= 0.0 or cap <= 0:
        raise ValueError("thresholds and cap must be positive")
    keep = gm.weights >= prune_threshold
    w = gm.weights[keep]
    mu = gm.means[keep]
    cov = gm.covariances[keep]
    if len(w) == 0:
        return GaussianMixtureMap.empty()

    merged_w, merged_mu, merged_cov = [], [], []
    alive = np.ones(len(w), dtype=bool)
    while alive.any():
        live_idx = np.nonzero(alive)[0]
        j = live_idx[np.argmax(w[live_idx])]
        d = mu[live_idx] - mu[j]
        maha = np.einsum("li,ij,lj->l", d, np.linalg.inv(cov[j]), d)
        group = live_idx[maha <= merge_threshold]
        wg = w[group]
        wsum = float(np.sum(wg))
        mug = (wg[:, None] * mu[group]).sum(axis=0) / wsum
        diff = mu[group] - mug
        cg = (
            wg[:, None, None]
            * (cov[group] + diff[:, :, None] * diff[:, None, :])
        ).sum(axis=0) / wsum
        merged_w.append(wsum)
        merged_mu.append(mug)
        merged_cov.append(0.5 * (cg + cg.T))
        alive[group] = False

    w = np.asarray(merged_w)
    mu = np.stack(merged_mu)
    cov = np.stack(merged_cov)
    if len(w) > cap:
        mass = float(np.sum(w))
        order = np.argsort(-w, kind="stable")[:cap]
        order = np.sort(order)
        w, mu, cov = w[order], mu[order], cov[order]
        w = w * (mass / float(np.sum(w)))
    return GaussianMixtureMap(w, mu, cov)


def extract_map(gm: GaussianMixtureMap, weight_threshold: float = 0.5) -> list[VirtualTransmitter]:
    """Report component means with weight above threshold as VT estimates.

    A component with weight w >= 1.5 stands for round(w) coincident VTs and is
    reported that many times.
    """
    out: list[VirtualTransmitter] = []
    for wgt, mean in zip(gm.weights, gm.means):
        if wgt < weight_threshold:
            continue
        copies = int(round(wgt)) if wgt >= 1.5 else 1
        vt = VirtualTransmitter(mean[:2].copy(), max(float(mean[2]), 0.0))
        out.extend([vt] * copies)
    return out


def map_to_json(gm: GaussianMixtureMap) -> list[dict]:
    """JSON-ready snapshot: weight, mean, row-major covariance per component."""
    return [
        {
            "weight": float(wgt),
            "mean": [float(v) for v in mean],
            "covariance": [float(v) for v in cov.reshape(-1)],
        }
        for wgt, mean, cov in zip(gm.weights, gm.means, gm.covariances)
    ]


def map_from_json(obj: list[dict]) -> GaussianMixtureMap:
    if not obj:
        return GaussianMixtureMap.empty()
    return GaussianMixtureMap(
        np.array([c["weight"] for c in obj]),
        np.array([c["mean"] for c in obj]),
        np.array([c["covariance"] for c in obj]).reshape(-1, 3, 3),
    )
