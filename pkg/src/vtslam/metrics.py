"""Evaluation metrics: localization RMSE, error CDFs, per-VT mapping RMSE.

VT estimates are matched to ground truth by a gated, globally optimal
one-to-one assignment in the combined metric sqrt(|dp|^2 + lambda_b*db^2), so
VTs that share a position but differ in propagation bias are kept apart.
Per-VT RMSE is then computed on 2-D position errors only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import VirtualTransmitter

__all__ = [
    "RunResult",
    "VtMatchReport",
    "localization_rmse",
    "error_cdf",
    "match_vts",
    "vt_rmse",
]

#: tie-break nudge: equidistant estimates go to the lower-index truth VT
_TIE_EPS = 1e-12


@dataclass
class RunResult:
    """Outputs of one simulation run needed for evaluation."""

    errors: np.ndarray
    map_estimate: list[VirtualTransmitter] = field(default_factory=list)
    truth_vts: list[VirtualTransmitter] = field(default_factory=list)
    seconds_per_step: float = 0.0

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float).reshape(-1)


def localization_rmse(errors) -> float:
    """RMSE pooled over all steps and runs.

    Accepts a single error array or an iterable of per-run arrays.
    """
    if isinstance(errors, np.ndarray) and errors.ndim == 1:
        pooled = errors
    else:
        parts = [np.asarray(e, dtype=float).reshape(-1) for e in errors]
        if not parts:
            raise ValueError("no error samples")
        pooled = np.concatenate(parts)
    if pooled.size == 0:
        raise ValueError("no error samples")
    return float(np.sqrt(np.mean(pooled**2)))


def error_cdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF as sorted (error, fraction) points, right-continuous."""
    pooled = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if pooled.size == 0:
        raise ValueError("no error samples")
    n = pooled.size
    points: list[tuple[float, float]] = []
    for i, x in enumerate(pooled):
        frac = (i + 1) / n
        if points and points[-1][0] == x:
            points[-1] = (float(x), frac)
        else:
            points.append((float(x), frac))
    return points


def _combined_distance(est: VirtualTransmitter, truth: VirtualTransmitter, lambda_bias: float) -> float:
    dp = est.position - truth.position
    db = est.bias - truth.bias
    return float(np.sqrt(dp @ dp + lambda_bias * db * db))


def match_vts(
    estimates: list[VirtualTransmitter],
    truth: list[VirtualTransmitter],
    lambda_bias: float = 1.0,
    gate: float = 5.0,
) -> list[tuple[int, int]]:
    """Gated optimal assignment; returns (estimate_index, truth_index) pairs."""
    if not estimates or not truth:
        return []
    cost = np.empty((len(estimates), len(truth)))
    for i, est in enumerate(estimates):
        for j, tr in enumerate(truth):
            d = _combined_distance(est, tr, lambda_bias)
            cost[i, j] = d + j * _TIE_EPS if d <= gate else 1e9
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if cost[i, j] < 1e9]


@dataclass
class VtMatchReport:
    """Per-VT mapping accuracy over a set of runs."""

    rmse: list[float | None]
    assigned: list[int]
    missed: list[int]
    spurious: int
    truth: list[VirtualTransmitter] = field(default_factory=list)

    def as_table(self) -> list[dict]:
        return [
            {
                "vt": k + 1,
                "x": float(self.truth[k].position[0]) if self.truth else None,
                "y": float(self.truth[k].position[1]) if self.truth else None,
                "bias": float(self.truth[k].bias) if self.truth else None,
                "rmse": self.rmse[k],
                "assigned": self.assigned[k],
                "missed": self.missed[k],
            }
            for k in range(len(self.rmse))
        ]


def vt_rmse(
    maps_per_run: list[list[VirtualTransmitter]],
    truth: list[VirtualTransmitter],
    lambda_bias: float = 1.0,
    gate: float = 5.0,
) -> VtMatchReport:
    """Per-VT 2-D position RMSE over runs; unmatched truths count as missed."""
    if not truth:
        raise ValueError("ground truth VT list is empty")
    nt = len(truth)
    sq_errors: list[list[float]] = [[] for _ in range(nt)]
    missed = [0] * nt
    spurious = 0
    for est_map in maps_per_run:
        pairs = match_vts(est_map, truth, lambda_bias, gate)
        matched_truth = {j for _, j in pairs}
        spurious += len(est_map) - len(pairs)
        for j in range(nt):
            if j not in matched_truth:
                missed[j] += 1
        for i, j in pairs:
            dp = est_map[i].position - truth[j].position
            sq_errors[j].append(float(dp @ dp))
    rmse: list[float | None] = [
        float(np.sqrt(np.mean(s))) if s else None for s in sq_errors
    ]
    assigned = [len(s) for s in sq_errors]
    return VtMatchReport(
        rmse=rmse, assigned=assigned, missed=missed, spurious=spurious, truth=list(truth)
    )
