"""Rao-Blackwellized particle filter for agent tracking with PHD maps.

Each particle carries an agent-state hypothesis and its own Gaussian-mixture
PHD map.  A step runs: propagate -> measurement-driven birth (from the
previous step's unmatched measurements at the previous state) -> PHD predict
-> gate -> PHD update -> particle reweighting -> record pending births ->
prune/merge -> ESS-triggered systematic resampling -> estimation.

Particle weights are computed in the log domain.  The NLOS weight factor
supports four strategies: conditioning the measurement likelihood on an
empty feature set, on the single strongest map feature, on all extracted
features (exact association sum), or the closed-form single-cluster
expression used by the comparison method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .association import log_association_sum
from .gmphd import (
    BirthParams,
    GaussianMixtureMap,
    GateResult,
    birth_component,
    detection_probability,
    extract_map,
    gate,
    predict as phd_predict,
    prune_merge,
    update_with_stats,
)
from .geometry import RangeBearing, VirtualTransmitter, predict_measurement, wrap_angle
from .motion import AgentState, MotionParams, propagate
from .simulate import MeasurementSet, SensorParams, clutter_density

__all__ = [
    "WeightStrategy",
    "FilterParams",
    "Particle",
    "StepEvents",
    "StepResult",
    "PhdSlamFilter",
    "propagate_particles",
    "los_likelihood",
    "log_los_likelihood",
    "nlos_weight_factor",
    "log_nlos_weight_factor",
    "reweight",
    "effective_sample_size",
    "systematic_resample",
    "resample_if_needed",
    "estimate",
    "step",
    "log_mixture_density",
]

_LOG_2PI = math.log(2.0 * math.pi)
_NEG_INF = float("-inf")


class WeightStrategy(Enum):
    """Particle-weighting strategy for the NLOS scan likelihood."""

    MULTI_FEATURE = "multi-feature"
    EMPTY_SET = "empty-set"
    SINGLE_FEATURE = "single-feature"
    CLOSED_FORM_SINGLE_CLUSTER = "closed-form"


@dataclass(frozen=True)
class FilterParams:
    """Filter-level knobs (map hygiene, weighting, resampling)."""

    num_particles: int = 1000
    strategy: WeightStrategy = WeightStrategy.MULTI_FEATURE
    gate_threshold: float = 9.21
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    max_components: int = 100
    extract_threshold: float = 0.5
    ess_fraction: float = 0.5
    association_budget: int = 100_000
    init_spread: float = 0.0

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be >= 1")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise ValueError("ess_fraction must lie in (0, 1]")
        if min(self.gate_threshold, self.prune_threshold, self.merge_threshold) <= 0.0:
            raise ValueError("thresholds must be positive")
        if self.max_components < 1 or self.association_budget < 1:
            raise ValueError("max_components and association_budget must be >= 1")
        if self.init_spread < 0.0:
            raise ValueError("init_spread must be non-negative")


@dataclass
class Particle:
    """One trajectory hypothesis: current state, weight, map, pending births."""

    state: AgentState
    weight: float
    map: GaussianMixtureMap = field(default_factory=GaussianMixtureMap.empty)
    pending_births: tuple[RangeBearing, ...] = ()
    predicted_map: GaussianMixtureMap | None = None

    def copy(self) -> "Particle":
        return Particle(
            state=self.state,
            weight=self.weight,
            map=self.map.copy(),
            pending_births=tuple(self.pending_births),
            predicted_map=None,
        )


@dataclass(frozen=True)
class StepEvents:
    """Counts of numerical-hygiene events during one step."""

    bias_clamps: int = 0
    cov_repairs: int = 0
    association_truncations: int = 0
    weight_resets: int = 0

    def __add__(self, other: "StepEvents") -> "StepEvents":
        return StepEvents(
            self.bias_clamps + other.bias_clamps,
            self.cov_repairs + other.cov_repairs,
            self.association_truncations + other.association_truncations,
            self.weight_resets + other.weight_resets,
        )


@dataclass(frozen=True)
class StepResult:
    agent: AgentState
    vts: list[VirtualTransmitter]
    ess: float
    resampled: bool
    events: StepEvents


def propagate_particles(
    particles: list[Particle], params: MotionParams, rng: np.random.Generator
) -> list[Particle]:
    """Sample each particle's next state from the motion model.

    The proposal equals the transition density, so weights are unchanged.
    Noise is drawn as one (N, 3) block to pin the stream layout.
    """
    noise = rng.normal(0.0, params.noise_std, size=(len(particles), 3))
    return [
        replace(p, state=propagate(p.state, noise[i], params.dt), predicted_map=None)
        for i, p in enumerate(particles)
    ]


def log_los_likelihood(
    state: AgentState, z0: RangeBearing | None, anchor, sensor: SensorParams
) -> float:
    """Log Gaussian density of the LOS residual; 0.0 when no LOS measurement."""
    if z0 is None:
        return 0.0
    zhat = predict_measurement(state.position, state.bias, VirtualTransmitter(anchor, 0.0))
    rd = (z0.range - zhat.range) / sensor.sigma_d0
    bd = wrap_angle(z0.bearing - zhat.bearing) / sensor.sigma_theta0
    return -_LOG_2PI - math.log(sensor.sigma_d0 * sensor.sigma_theta0) - 0.5 * (rd * rd + bd * bd)


def los_likelihood(
    particle: Particle, z0: RangeBearing | None, anchor, sensor: SensorParams
) -> float:
    """LOS likelihood factor for one particle (1.0 when LOS is absent)."""
    return math.exp(log_los_likelihood(particle.state, z0, anchor, sensor))


def log_mixture_density(gm: GaussianMixtureMap, point: np.ndarray) -> float:
    """Log PHD intensity of the mixture at a 3-D point."""
    if len(gm) == 0:
        return _NEG_INF
    point = np.asarray(point, dtype=float).reshape(3)
    terms = np.full(len(gm), _NEG_INF)
    for j in range(len(gm)):
        if gm.weights[j] <= 0.0:
            continue
        diff = point - gm.means[j]
        cov = gm.covariances[j]
        sol = np.linalg.solve(cov, diff)
        _, logdet = np.linalg.slogdet(cov)
        terms[j] = (
            math.log(gm.weights[j])
            - 0.5 * (3.0 * _LOG_2PI + logdet + float(diff @ sol))
        )
    return float(logsumexp(terms))


def _point_feature_logs(
    features: list[np.ndarray],
    measurements: list[RangeBearing],
    agent: AgentState,
    sensor: SensorParams,
    gate_threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    """(log_miss, log_pair) for point features under the R-only noise model."""
    n_feat, n_meas = len(features), len(measurements)
    log_miss = np.full(n_feat, _NEG_INF)
    log_pair = np.full((n_feat, n_meas), _NEG_INF)
    log_norm = -_LOG_2PI - math.log(sensor.sigma_d * sensor.sigma_theta)
    for f, mean in enumerate(features):
        pd = detection_probability(agent.position, mean[:2], sensor)
        log_miss[f] = math.log1p(-pd) if pd < 1.0 else _NEG_INF
        if pd == 0.0:
            continue
        zhat = predict_measurement(
            agent.position, agent.bias, VirtualTransmitter(mean[:2], max(mean[2], 0.0))
        )
        for l, z in enumerate(measurements):
            rd = (z.range - zhat.range) / sensor.sigma_d
            bd = wrap_angle(z.bearing - zhat.bearing) / sensor.sigma_theta
            maha = rd * rd + bd * bd
            if maha > gate_threshold:
                continue
            log_pair[f, l] = math.log(pd) + log_norm - 0.5 * maha
    return log_miss, log_pair


def _extracted_features(gm: GaussianMixtureMap, threshold: float) -> list[np.ndarray]:
    feats: list[np.ndarray] = []
    for wgt, mean in zip(gm.weights, gm.means):
        if wgt < threshold:
            continue
        copies = int(round(wgt)) if wgt >= 1.5 else 1
        feats.extend([mean.copy()] * copies)
    return feats


def _log_clutter(measurements: list[RangeBearing], sensor: SensorParams) -> np.ndarray:
    out = np.full(len(measurements), _NEG_INF)
    for l, z in enumerate(measurements):
        kappa = clutter_density(z, sensor)
        if kappa > 0.0:
            out[l] = math.log(kappa)
    return out


def _log_closed_form(
    measurements: list[RangeBearing],
    agent: AgentState,
    predicted_map: GaussianMixtureMap,
    sensor: SensorParams,
    gate_threshold: float,
) -> float:
    """Closed-form single-cluster scan likelihood over the predicted map."""
    from .gmphd import _innovation, _linearize  # shared linearization helpers

    m = len(predicted_map)
    pd = np.array(
        [
            detection_probability(agent.position, mu[:2], sensor)
            for mu in predicted_map.means
        ]
    )
    total = -sensor.lambda_clutter - float(np.sum(pd * predicted_map.weights))
    if not measurements:
        return total
    zhats, s_invs, s_dets = [], [], []
    for j in range(m):
        zhat, h, r = _linearize(predicted_map.means[j], agent, sensor)
        s = h @ predicted_map.covariances[j] @ h.T + r
        zhats.append(zhat)
        s_invs.append(np.linalg.inv(s))
        s_dets.append(float(np.linalg.det(s)))
    for z in measurements:
        acc = clutter_density(z, sensor)
        for j in range(m):
            if pd[j] == 0.0:
                continue
            nu = _innovation(z, zhats[j])
            maha = float(nu @ s_invs[j] @ nu)
            if maha > gate_threshold:
                continue
            q = math.exp(-0.5 * maha) / (2.0 * math.pi * math.sqrt(s_dets[j]))
            acc += pd[j] * predicted_map.weights[j] * q
        if acc <= 0.0:
            return _NEG_INF
        total += math.log(acc)
    return total


def log_nlos_weight_factor(
    strategy: WeightStrategy,
    measurements: list[RangeBearing],
    agent: AgentState,
    predicted_map: GaussianMixtureMap,
    posterior_map: GaussianMixtureMap,
    sensor: SensorParams,
    params: FilterParams,
) -> tuple[float, bool]:
    """Log NLOS weight factor for one particle; also reports truncation.

    The factor is p(Z | x, L) * p_prior(L) / p_post(L) where L is the
    conditioning feature set chosen by the strategy and the map set-densities
    are Poisson with the prior/posterior mixture intensities.
    """
    mass_prior = predicted_map.total_mass
    mass_post = posterior_map.total_mass
    measurements = list(measurements)

    if strategy is WeightStrategy.CLOSED_FORM_SINGLE_CLUSTER:
        return (
            _log_closed_form(
                measurements, agent, predicted_map, sensor, params.gate_threshold
            ),
            False,
        )

    if strategy is WeightStrategy.EMPTY_SET:
        features: list[np.ndarray] = []
    elif strategy is WeightStrategy.SINGLE_FEATURE:
        feats = _extracted_features(posterior_map, params.extract_threshold)
        if feats:
            best = int(np.argmax(posterior_map.weights))
            features = [posterior_map.means[best].copy()]
        else:
            features = []
    elif strategy is WeightStrategy.MULTI_FEATURE:
        features = _extracted_features(posterior_map, params.extract_threshold)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown strategy {strategy}")

    log_miss, log_pair = _point_feature_logs(
        features, measurements, agent, sensor, params.gate_threshold
    )
    result = log_association_sum(
        _log_clutter(measurements, sensor),
        log_miss,
        log_pair,
        budget=params.association_budget,
    )
    total = result.log_value - sensor.lambda_clutter + (mass_post - mass_prior)
    for mean in features:
        total += log_mixture_density(predicted_map, mean)
        total -= log_mixture_density(posterior_map, mean)
    return total, result.truncated


def nlos_weight_factor(
    particle: Particle,
    measurements: list[RangeBearing],
    strategy: WeightStrategy,
    sensor: SensorParams,
    params: FilterParams | None = None,
) -> float:
    """NLOS weight factor for a particle whose map was predicted and updated.

    Requires particle.predicted_map (set during the step) and particle.map as
    the post-update mixture.
    """
    if particle.predicted_map is None:
        raise ValueError("particle has no predicted map for this step")
    params = params or FilterParams()
    log_f, _ = log_nlos_weight_factor(
        strategy,
        measurements,
        particle.state,
        particle.predicted_map,
        particle.map,
        sensor,
        params,
    )
    return math.exp(log_f)


@dataclass(frozen=True)
class ReweightResult:
    particles: list[Particle]
    log_factors: np.ndarray
    reset: bool
    truncations: int


def _normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normalized linear weights; uniform reset when all mass underflows."""
    norm = float(logsumexp(log_w))
    if not np.isfinite(norm):
        n = len(log_w)
        return np.full(n, 1.0 / n), True
    w = np.exp(log_w - norm)
    return w / float(np.sum(w)), False


def reweight_detailed(
    particles: list[Particle],
    z0: RangeBearing | None,
    z_nlos: list[RangeBearing],
    strategy: WeightStrategy,
    sensor: SensorParams,
    anchor,
    params: FilterParams | None = None,
) -> ReweightResult:
    """Apply LOS and NLOS factors to particle weights and normalize."""
    params = params or FilterParams()
    n = len(particles)
    log_f = np.zeros(n)
    truncations = 0
    for i, p in enumerate(particles):
        lf = log_los_likelihood(p.state, z0, anchor, sensor)
        if p.predicted_map is not None:
            nf, trunc = log_nlos_weight_factor(
                strategy, z_nlos, p.state, p.predicted_map, p.map, sensor, params
            )
            lf += nf
            truncations += int(trunc)
        log_f[i] = lf
    prev = np.array([p.weight for p in particles])
    with np.errstate(divide="ignore"):
        log_w = np.where(prev > 0.0, np.log(np.maximum(prev, 1e-300)), _NEG_INF) + log_f
    w, reset = _normalize_log_weights(log_w)
    out = [replace(p, weight=float(w[i])) for i, p in enumerate(particles)]
    return ReweightResult(out, log_f, reset, truncations)


def reweight(
    particles: list[Particle],
    z0: RangeBearing | None,
    z_nlos: list[RangeBearing],
    strategy: WeightStrategy,
    sensor: SensorParams,
    anchor,
    params: FilterParams | None = None,
) -> list[Particle]:
    """Weights proportional to previous weight times LOS and NLOS factors."""
    return reweight_detailed(particles, z0, z_nlos, strategy, sensor, anchor, params).particles


def effective_sample_size(weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(weights**2))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, N evenly spaced positions."""
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def resample_if_needed(
    particles: list[Particle],
    threshold_fraction: float,
    rng: np.random.Generator,
) -> tuple[list[Particle], bool]:
    """Systematic resampling when ESS drops below threshold_fraction * N."""
    n = len(particles)
    weights = np.array([p.weight for p in particles])
    if effective_sample_size(weights) >= threshold_fraction * n:
        return particles, False
    idx = systematic_resample(weights, rng)
    out = []
    for i in idx:
        q = particles[int(i)].copy()
        q.weight = 1.0 / n
        out.append(q)
    return out, True


def estimate(
    particles: list[Particle], extract_threshold: float = 0.5
) -> tuple[AgentState, list[VirtualTransmitter]]:
    """Weighted-mean agent state and the strongest particle's extracted map."""
    weights = np.array([p.weight for p in particles])
    states = np.stack([p.state.as_vector() for p in particles])
    mean = weights @ states
    best = int(np.argmax(weights))
    return AgentState.from_vector(mean), extract_map(particles[best].map, extract_threshold)


class _ReferenceEngine:
    """Per-particle loop implementation of the filter step (reference)."""

    def __init__(
        self,
        init_state: AgentState,
        anchor,
        motion: MotionParams,
        sensor: SensorParams,
        birth: BirthParams,
        params: FilterParams,
        rng: np.random.Generator,
    ):
        self.anchor = np.asarray(anchor, dtype=float)
        self.motion = motion
        self.sensor = sensor
        self.birth = birth
        self.params = params
        self.rng = rng
        n = params.num_particles
        if params.init_spread > 0.0:
            offsets = rng.normal(0.0, params.init_spread, size=(n, 5))
        else:
            offsets = np.zeros((n, 5))
        base = init_state.as_vector()
        self.particles = [
            Particle(state=AgentState.from_vector(base + offsets[i]), weight=1.0 / n)
            for i in range(n)
        ]

    def step(self, scan: MeasurementSet) -> StepResult:
        params, sensor = self.params, self.sensor
        z0 = scan.los
        nlos = list(scan.nlos)
        prev_states = [p.state for p in self.particles]
        particles = propagate_particles(self.particles, self.motion, self.rng)

        clamps = repairs = 0
        gate_results: list[GateResult] = []
        for i, p in enumerate(particles):
            births = []
            for z in p.pending_births:
                gc = birth_component(z, prev_states[i], self.birth, sensor)
                if gc is not None:
                    births.append(gc)
            predicted = phd_predict(p.map, births)
            gres = gate(predicted, nlos, p.state, sensor, params.gate_threshold)
            posterior, stats = update_with_stats(predicted, nlos, p.state, sensor, gres)
            clamps += stats.bias_clamp_count
            repairs += stats.cov_repair_count
            p.predicted_map = predicted
            p.map = posterior
            gate_results.append(gres)

        rw = reweight_detailed(
            particles, z0, nlos, params.strategy, sensor, self.anchor, params
        )
        particles = rw.particles

        for i, p in enumerate(particles):
            p.pending_births = tuple(nlos[l] for l in gate_results[i].unmatched)
            p.map = prune_merge(
                p.map, params.prune_threshold, params.merge_threshold, params.max_components
            )
            p.predicted_map = None

        weights = np.array([p.weight for p in particles])
        ess = effective_sample_size(weights)
        particles, resampled = resample_if_needed(particles, params.ess_fraction, self.rng)
        self.particles = particles

        agent, vts = estimate(particles, params.extract_threshold)
        events = StepEvents(
            bias_clamps=clamps,
            cov_repairs=repairs,
            association_truncations=rw.truncations,
            weight_resets=int(rw.reset),
        )
        return StepResult(agent=agent, vts=vts, ess=ess, resampled=resampled, events=events)

    def snapshot(self) -> dict:
        """Canonical arrays for cross-engine comparison."""
        return {
            "states": np.stack([p.state.as_vector() for p in self.particles]),
            "weights": np.array([p.weight for p in self.particles]),
            "maps": [
                (p.map.weights.copy(), p.map.means.copy(), p.map.covariances.copy())
                for p in self.particles
            ],
            "pending": [
                np.array([[z.range, z.bearing] for z in p.pending_births]).reshape(-1, 2)
                for p in self.particles
            ],
        }


class PhdSlamFilter:
    """Facade choosing between the reference and the batched engine."""

    def __init__(
        self,
        init_state: AgentState,
        anchor,
        motion: MotionParams,
        sensor: SensorParams,
        birth: BirthParams | None = None,
        params: FilterParams | None = None,
        rng: np.random.Generator | int | None = None,
        engine: str = "batched",
    ):
        if isinstance(rng, (int, np.integer)) or rng is None:
            rng = np.random.default_rng(rng)
        birth = birth or BirthParams()
        params = params or FilterParams()
        if engine == "reference":
            self._engine = _ReferenceEngine(
                init_state, anchor, motion, sensor, birth, params, rng
            )
        elif engine == "batched":
            from ._batch import BatchedEngine

            self._engine = BatchedEngine(
                init_state, anchor, motion, sensor, birth, params, rng
            )
        else:
            raise ValueError(f"unknown engine {engine!r}")
        self.engine_name = engine
        self.params = params
        self.total_events = StepEvents()

    def step(self, scan: MeasurementSet) -> StepResult:
        result = self._engine.step(scan)
        self.total_events = self.total_events + result.events
        return result

    def snapshot(self) -> dict:
        return self._engine.snapshot()

    @property
    def particles(self) -> list[Particle]:
        engine = self._engine
        if isinstance(engine, _ReferenceEngine):
            return engine.particles
        return engine.materialize_particles()


def step(filt: PhdSlamFilter, scan: MeasurementSet) -> StepResult:
    """One filter step (module-level alias for PhdSlamFilter.step)."""
    return filt.step(scan)
