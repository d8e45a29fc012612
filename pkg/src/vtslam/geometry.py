"""Environment geometry and the virtual-transmitter (VT) measurement model.

An NLOS multipath component that bounces off walls and/or scatterers can be
treated as if it were transmitted directly from a fictitious emitter: the
virtual transmitter.  A VT is a 3-D state (2-D position plus a non-negative
propagation bias) chosen so that, for any receiver position, the direct
distance to the VT plus the bias equals the physical path length of the
bounce chain.  This module enumerates the ground-truth VTs of an environment
and provides the noiseless range-bearing measurement function with its
Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Environment",
    "Reflector",
    "VirtualTransmitter",
    "RangeBearing",
    "DegenerateGeometryError",
    "wrap_angle",
    "mirror_point",
    "enumerate_vts",
    "predict_measurement",
    "measurement_jacobians",
]

_UNIT_TOL = 1e-12


class DegenerateGeometryError(ValueError):
    """Raised when agent and transmitter positions coincide."""


def wrap_angle(theta):
    """Wrap angle(s) to the canonical interval (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, np.pi, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Reflector:
    """Infinite reflecting line given by a point on it and a unit normal."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if abs(np.linalg.norm(self.normal) - 1.0) > _UNIT_TOL:
            raise ValueError("reflector normal must have unit norm")

    def signed_distance(self, p) -> float:
        return float(np.dot(np.asarray(p, dtype=float) - self.point, self.normal))


@dataclass(frozen=True)
class Environment:
    """Anchor plus reflecting lines and point scatterers, all in metres."""

    anchor: np.ndarray
    reflectors: tuple[Reflector, ...] = ()
    scatterers: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "reflectors", tuple(self.reflectors))
        object.__setattr__(
            self, "scatterers", tuple(np.asarray(s, dtype=float) for s in self.scatterers)
        )
        for r in self.reflectors:
            if abs(r.signed_distance(self.anchor)) < 1e-9:
                raise ValueError("anchor must not lie on a reflector line")


@dataclass(frozen=True)
class VirtualTransmitter:
    """VT state: 2-D position, propagation bias, and the interaction chain.

    ``provenance`` lists the interactions in propagation order as
    ``("R", i)`` (reflector i) or ``("S", j)`` (scatterer j); it is empty for
    VTs extracted from a filter map, where the chain is unknown.
    """

    position: np.ndarray
    bias: float = 0.0
    provenance: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if self.bias < 0.0:
            raise ValueError("VT bias must be non-negative")

    @property
    def state(self) -> np.ndarray:
        """3-vector (x, y, bias)."""
        return np.array([self.position[0], self.position[1], self.bias])


@dataclass(frozen=True)
class RangeBearing:
    """Range-bearing pair: range in metres, bearing in (-pi, pi] radians."""

    range: float
    bearing: float

    def __post_init__(self):
        if not self.range > 0.0:
            raise ValueError(f"range must be positive, got {self.range}")
        if not (-math.pi < self.bearing <= math.pi):
            raise ValueError(f"bearing {self.bearing} outside (-pi, pi]")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.range, self.bearing])


def mirror_point(p, line: Reflector) -> np.ndarray:
    """Reflect point ``p`` across an infinite line.  Involution."""
    p = np.asarray(p, dtype=float)
    return p - 2.0 * line.signed_distance(p) * line.normal


def _chain_vt(env: Environment, chain: tuple) -> VirtualTransmitter:
    """Build the VT for one interaction chain (tags in propagation order).

    Pure-reflection chains mirror the anchor through each reflector in turn
    and carry no bias.  Once a scatterer is hit, it becomes the effective
    source: the VT sits at the last scatterer mirrored through all subsequent
    reflectors, and the bias is the unfolded path length from the anchor up
    to that scatterer.
    """
    source = env.anchor
    bias = 0.0
    pending_reflections = []
    for tag in chain:
        kind, idx = tag
        if kind == "R":
            pending_reflections.append(env.reflectors[idx])
        else:
            image = source
            for line in pending_reflections:
                image = mirror_point(image, line)
            scat = env.scatterers[idx]
            bias += float(np.linalg.norm(image - scat))
            source = scat
            pending_reflections = []
    position = source
    for line in pending_reflections:
        position = mirror_point(position, line)
    return VirtualTransmitter(position=position, bias=bias, provenance=chain)


def enumerate_vts(env: Environment, max_order: int = 2) -> list[VirtualTransmitter]:
    """Enumerate ground-truth VTs for all interaction chains up to ``max_order``.

    Chains never repeat the same interaction twice in a row (a ray cannot
    reflect off the same infinite wall consecutively).  Chains that share a
    (position, bias) pair are retained as distinct entries with their own
    provenance.  Ordering: by chain length, then pure reflections before
    scatterer chains (later last-scatterer position first), then by tag.
    """
    if max_order > 2:
        raise ValueError("interaction chains beyond order 2 are not supported")
    tags = [("R", i) for i in range(len(env.reflectors))] + [
        ("S", j) for j in range(len(env.scatterers))
    ]
    chains = []

    def extend(chain):
        if 1 <= len(chain) <= max_order:
            chains.append(tuple(chain))
        if len(chain) >= max_order:
            return
        for tag in tags:
            if chain and chain[-1] == tag:
                continue
            extend(chain + [tag])

    extend([])

    def sort_key(chain):
        last_scatter = max(
            (pos for pos, tag in enumerate(chain) if tag[0] == "S"), default=-1
        )
        return (len(chain), last_scatter, chain)

    return [_chain_vt(env, c) for c in sorted(chains, key=sort_key)]


def predict_measurement(agent_position, agent_bias: float, vt: VirtualTransmitter) -> RangeBearing:
    """Noiseless range-bearing of a VT as seen from the agent.

    range = |r_agent - r_vt| + agent_bias + vt_bias, bearing = four-quadrant
    angle of (r_vt - r_agent) wrapped to (-pi, pi].
    """
    delta = vt.position - np.asarray(agent_position, dtype=float)
    dist = float(np.linalg.norm(delta))
    if dist < 1e-12:
        raise DegenerateGeometryError("agent and VT positions coincide")
    rng = dist + float(agent_bias) + vt.bias
    bearing = wrap_angle(math.atan2(delta[1], delta[0]))
    return RangeBearing(range=rng, bearing=bearing)


def measurement_jacobians(agent_position, vt: VirtualTransmitter):
    """Jacobians of the range-bearing function.

    Returns ``(H_vt, H_agent)``: 2x3 partials w.r.t. the VT state
    (x_vt, y_vt, bias_vt) and 2x5 partials w.r.t. the agent state
    (x, y, vx, vy, b).  Velocity columns are zero; range has unit slope in
    both biases; bearing is bias-independent.
    """
    delta = vt.position - np.asarray(agent_position, dtype=float)
    d2 = float(delta @ delta)
    dist = math.sqrt(d2)
    if dist < 1e-12:
        raise DegenerateGeometryError("agent and VT positions coincide")
    dx, dy = delta / dist
    h_vt = np.array([
        [dx, dy, 1.0],
        [-delta[1] / d2, delta[0] / d2, 0.0],
    ])
    h_agent = np.array([
        [-dx, -dy, 0.0, 0.0, 1.0],
        [delta[1] / d2, -delta[0] / d2, 0.0, 0.0, 0.0],
    ])
    return h_vt, h_agent
