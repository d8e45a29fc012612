"""Poisson-clutter multi-object likelihood over feature/measurement pairings.

Computes, in the log domain, the exact sum over all one-to-one association
maps between a set of point features and a measurement scan: each measurement
is explained either by clutter or by one unused feature, and every unassigned
feature pays its missed-detection factor.  A problem instance is given by

    log_clutter[l]  = log kappa(z_l)
    log_miss[f]     = log (1 - P_D(f))
    log_pair[f, l]  = log (P_D(f) * g_f(z_l)),  -inf where the pair is gated out

and the returned value is log of

    sum over partial injections a: {1..L} -> {clutter} + features of
        prod_{l: a(l)=clutter} kappa(z_l)
      * prod_{l: a(l)=f}       P_D(f) g_f(z_l)
      * prod_{f unused}        (1 - P_D(f))

The formulation is division-free so P_D = 1 and kappa = 0 need no special
casing.  When the enumeration would exceed `budget` leaves, each
measurement's candidate features are truncated to the strongest few (ranked
by log_pair) so the bound fits; the result is then a lower bound and the
truncation is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = ["AssociationResult", "log_association_sum"]

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class AssociationResult:
    log_value: float
    truncated: bool


def _candidate_cap(lengths: list[int], budget: int) -> int | None:
    """Largest per-measurement candidate cap whose leaf bound fits the budget."""
    full = 1
    for n in lengths:
        full *= n + 1
    if full <= budget:
        return None
    cap = max(lengths)
    while cap > 1:
        bound = 1
        for n in lengths:
            bound *= min(n, cap) + 1
        if bound <= budget:
            return cap
        cap -= 1
    return 1


def log_association_sum(
    log_clutter: np.ndarray,
    log_miss: np.ndarray,
    log_pair: np.ndarray,
    budget: int | None = 100_000,
) -> AssociationResult:
    """Exact (or budget-truncated) log multi-object likelihood."""
    log_clutter = np.asarray(log_clutter, dtype=float)
    log_miss = np.asarray(log_miss, dtype=float)
    log_pair = np.asarray(log_pair, dtype=float)
    n_feat = len(log_miss)
    n_meas = len(log_clutter)
    if log_pair.shape != (n_feat, n_meas):
        raise ValueError("log_pair must be (features x measurements)")
    if n_feat > 62:
        raise ValueError("too many features for bitmask enumeration")

    candidates: list[list[int]] = []
    for l in range(n_meas):
        feats = [f for f in range(n_feat) if np.isfinite(log_pair[f, l])]
        feats.sort(key=lambda f: -log_pair[f, l])
        candidates.append(feats)

    truncated = False
    if budget is not None and n_meas:
        cap = _candidate_cap([len(c) for c in candidates], budget)
        if cap is not None:
            candidates = [c[:cap] for c in candidates]
            truncated = True

    # Features with log_miss = -inf (P_D exactly 1) must be assigned in every
    # surviving term; finite miss terms are added via a running sum so leaves
    # cost O(1).
    must_assign = 0
    finite_miss_total = 0.0
    for f in range(n_feat):
        if np.isfinite(log_miss[f]):
            finite_miss_total += log_miss[f]
        else:
            must_assign |= 1 << f

    terms: list[float] = []

    def dfs(l: int, used: int, acc: float, used_finite_miss: float) -> None:
        if l == n_meas:
            if must_assign & ~used:
                return
            terms.append(acc + finite_miss_total - used_finite_miss)
            return
        if np.isfinite(log_clutter[l]):
            dfs(l + 1, used, acc + log_clutter[l], used_finite_miss)
        for f in candidates[l]:
            bit = 1 << f
            if used & bit:
                continue
            miss = log_miss[f] if np.isfinite(log_miss[f]) else 0.0
            dfs(l + 1, used | bit, acc + log_pair[f, l], used_finite_miss + miss)

    dfs(0, 0, 0.0, 0.0)
    if not terms:
        return AssociationResult(_NEG_INF, truncated)
    return AssociationResult(float(logsumexp(np.array(terms))), truncated)
