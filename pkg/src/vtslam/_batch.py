"""Vectorized multi-particle engine.

Mirrors the per-particle reference engine in rbpf.py but stores the whole
particle ensemble in padded numpy arrays: states (N,5), map weights (N,M),
map means (N,M,3), map covariances (N,M,3,3) and pending unmatched
measurements (N,P,2), with per-particle counts and padding at the tail of
each row.  All phases of a step (propagate, birth, gate, PHD update, particle
reweighting, prune/merge, resampling) are batched across particles; only the
association sum runs per particle, on small gated subproblems.

The engine consumes the RNG in the same order as the reference engine (one
(N,3) noise block per step, one uniform per resampling event), so both
produce matching trajectories for a given seed up to floating-point
reassociation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .association import log_association_sum
from .gmphd import BirthParams, GaussianMixtureMap, extract_map
from .geometry import RangeBearing, wrap_angle
from .motion import AgentState, MotionParams, transition_matrices
from .rbpf import (
    FilterParams,
    Particle,
    StepEvents,
    StepResult,
    WeightStrategy,
    effective_sample_size,
    systematic_resample,
)
from .simulate import MeasurementSet, SensorParams, clutter_density

_LOG_2PI = math.log(2.0 * math.pi)
_NEG_INF = float("-inf")
_PAD_MU = np.array([1e9, 1e9, 0.0])
_JITTER0 = 1e-12
_JITTER_TRIES = 10


def _pad_mu(n: int, m: int) -> np.ndarray:
    return np.tile(_PAD_MU, (n, m, 1))


def _pad_cov(n: int, m: int) -> np.ndarray:
    return np.tile(np.eye(3), (n, m, 1, 1))


class BatchedEngine:
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
        self.A, self.B = transition_matrices(motion.dt)
        n = params.num_particles
        base = init_state.as_vector()
        if params.init_spread > 0.0:
            offsets = rng.normal(0.0, params.init_spread, size=(n, 5))
        else:
            offsets = np.zeros((n, 5))
        self.states = base[None, :] + offsets
        self.weights = np.full(n, 1.0 / n)
        self.mw = np.zeros((n, 0))
        self.mmu = np.zeros((n, 0, 3))
        self.mcov = np.zeros((n, 0, 3, 3))
        self.mcount = np.zeros(n, dtype=int)
        self.pz = np.zeros((n, 0, 2))
        self.pcount = np.zeros(n, dtype=int)

    # -- step phases ----------------------------------------------------

    def _append_births(self, prev: np.ndarray) -> None:
        """Grow map arrays with birth components from pending measurements."""
        n = len(self.weights)
        p = self.pz.shape[1]
        if p == 0:
            return
        bp, sensor = self.birth, self.sensor
        valid = np.arange(p)[None, :] < self.pcount[:, None]
        d = self.pz[..., 0]
        th = self.pz[..., 1]
        slack = d - prev[:, 4, None]
        adm = valid & (slack > 0.0)
        if not adm.any():
            return
        dist = bp.gamma * slack
        c, s = np.cos(th), np.sin(th)
        bmu = np.stack(
            [
                prev[:, 0, None] + dist * c,
                prev[:, 1, None] + dist * s,
                (1.0 - bp.gamma) * slack,
            ],
            axis=-1,
        )
        sig = np.stack(
            [
                bp.zeta * slack**2,
                bp.iota * slack**2 * sensor.sigma_theta**2,
                np.full_like(slack, bp.xi * sensor.sigma_d**2),
            ],
            axis=-1,
        )
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        t = np.empty((n, p, 3, 3))
        t[..., 0, 0] = c * inv_sqrt2
        t[..., 0, 1] = -s
        t[..., 0, 2] = c * inv_sqrt2
        t[..., 1, 0] = s * inv_sqrt2
        t[..., 1, 1] = c
        t[..., 1, 2] = s * inv_sqrt2
        t[..., 2, 0] = -inv_sqrt2
        t[..., 2, 1] = 0.0
        t[..., 2, 2] = inv_sqrt2
        bcov = (t * sig[..., None, :]) @ np.swapaxes(t, -1, -2)
        bcov = 0.5 * (bcov + np.swapaxes(bcov, -1, -2))

        nb = adm.sum(axis=1)
        m_old = self.mw.shape[1]
        m_new = m_old + int(nb.max())
        w = np.zeros((n, m_new))
        mu = _pad_mu(n, m_new)
        cov = _pad_cov(n, m_new)
        w[:, :m_old] = self.mw
        mu[:, :m_old] = self.mmu
        cov[:, :m_old] = self.mcov
        rank = np.cumsum(adm, axis=1) - 1
        rows, cols = np.nonzero(adm)
        dest = self.mcount[rows] + rank[rows, cols]
        w[rows, dest] = bp.alpha_birth
        mu[rows, dest] = bmu[rows, cols]
        cov[rows, dest] = bcov[rows, cols]
        self.mw, self.mmu, self.mcov = w, mu, cov
        self.mcount = self.mcount + nb

    def _repair_spd_batch(self, cov: np.ndarray, valid: np.ndarray) -> int:
        """Symmetrized covariances get jittered in place where not SPD."""
        a00 = cov[..., 0, 0]
        det2 = a00 * cov[..., 1, 1] - cov[..., 0, 1] ** 2
        det3 = np.linalg.det(cov)
        bad = valid & ~((a00 > 0.0) & (det2 > 0.0) & (det3 > 0.0))
        count = int(bad.sum())
        if count:
            for idx in zip(*np.nonzero(bad)):
                jitter = _JITTER0
                for _ in range(_JITTER_TRIES):
                    candidate = cov[idx] + jitter * np.eye(3)
                    try:
                        np.linalg.cholesky(candidate)
                        cov[idx] = candidate
                        break
                    except np.linalg.LinAlgError:
                        jitter *= 10.0
                else:
                    raise np.linalg.LinAlgError("covariance could not be repaired")
        return count

    def step(self, scan: MeasurementSet) -> StepResult:
        params, sensor, birth = self.params, self.sensor, self.birth
        n = len(self.weights)
        z0 = scan.los
        nlos = list(scan.nlos)
        nl = len(nlos)
        zr = np.array([z.range for z in nlos])
        zb = np.array([z.bearing for z in nlos])
        kappa = np.array([clutter_density(z, sensor) for z in nlos])
        with np.errstate(divide="ignore"):
            log_kappa = np.where(kappa > 0.0, np.log(np.maximum(kappa, 1e-300)), _NEG_INF)

        # propagate (weights unchanged: proposal = transition density)
        prev = self.states
        noise = self.rng.normal(0.0, self.motion.noise_std, size=(n, 3))
        self.states = prev @ self.A.T + noise @ self.B.T
        states = self.states

        # birth from previous step's unmatched measurements at previous state
        self._append_births(prev)
        m = self.mw.shape[1]
        validc = np.arange(m)[None, :] < self.mcount[:, None]
        mass_prior = self.mw.sum(axis=1)

        # linearized measurement model per component
        dxm = self.mmu[..., 0] - states[:, 0, None]
        dym = self.mmu[..., 1] - states[:, 1, None]
        d2 = dxm * dxm + dym * dym
        dist = np.sqrt(d2)
        d_safe = np.maximum(dist, 1e-12)
        d2_safe = np.maximum(d2, 1e-24)
        rhat = (dist + states[:, 4, None]) + np.maximum(self.mmu[..., 2], 0.0)
        bhat = wrap_angle(np.arctan2(dym, dxm))
        h = np.zeros((n, m, 2, 3))
        h[..., 0, 0] = dxm / d_safe
        h[..., 0, 1] = dym / d_safe
        h[..., 0, 2] = 1.0
        h[..., 1, 0] = -dym / d2_safe
        h[..., 1, 1] = dxm / d2_safe
        r = np.diag([sensor.sigma_d**2, sensor.sigma_theta**2])
        ht = np.swapaxes(h, -1, -2)
        s_mat = h @ self.mcov @ ht + r
        det_s = s_mat[..., 0, 0] * s_mat[..., 1, 1] - s_mat[..., 0, 1] * s_mat[..., 1, 0]
        s_inv = np.empty_like(s_mat)
        s_inv[..., 0, 0] = s_mat[..., 1, 1]
        s_inv[..., 0, 1] = -s_mat[..., 0, 1]
        s_inv[..., 1, 0] = -s_mat[..., 1, 0]
        s_inv[..., 1, 1] = s_mat[..., 0, 0]
        s_inv = s_inv / det_s[..., None, None]
        gain = self.mcov @ ht @ s_inv
        ikh = np.eye(3) - gain @ h
        cov_corr = ikh @ self.mcov @ np.swapaxes(ikh, -1, -2) + gain @ r @ np.swapaxes(
            gain, -1, -2
        )
        cov_corr = 0.5 * (cov_corr + np.swapaxes(cov_corr, -1, -2))
        repairs = self._repair_spd_batch(cov_corr, validc)

        pd = np.where(dist <= sensor.fov_radius, sensor.p_detect, 0.0) * validc

        # gate + corrector
        rd = zr[None, None, :] - rhat[..., None]
        bd = wrap_angle(zb[None, None, :] - bhat[..., None])
        maha = (
            s_inv[..., 0, 0, None] * rd * rd
            + (s_inv[..., 0, 1, None] + s_inv[..., 1, 0, None]) * rd * bd
            + s_inv[..., 1, 1, None] * bd * bd
        )
        gmask = (maha <= params.gate_threshold) & validc[..., None]
        q = np.exp(-0.5 * maha) / (2.0 * math.pi * np.sqrt(det_s))[..., None]
        nums = pd[..., None] * self.mw[..., None] * q * gmask
        denom = kappa[None, :] + nums.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            wdet = np.where(denom[:, None, :] > 0.0, nums / denom[:, None, :], 0.0)

        nu = np.stack([rd, bd], axis=-1)
        mu_corr = self.mmu[:, :, None, :] + (gain[:, :, None, :, :] @ nu[..., None])[..., 0]
        clamp_mask = (mu_corr[..., 2] < 0.0) & gmask
        clamps = int(clamp_mask.sum())
        mu_corr[..., 2] = np.maximum(mu_corr[..., 2], 0.0)

        gm_t = np.swapaxes(gmask, 1, 2)  # (N, L, M): detected components l-major
        cnt_det = gm_t.reshape(n, -1).sum(axis=1)
        m_out = m + (int(cnt_det.max()) if nl else 0)
        nw = np.zeros((n, m_out))
        nmu = _pad_mu(n, m_out)
        ncov = _pad_cov(n, m_out)
        nw[:, :m] = self.mw * (1.0 - pd)
        nmu[:, :m] = self.mmu
        ncov[:, :m] = self.mcov
        if nl and m:
            flat = gm_t.reshape(n, -1)
            rank = (np.cumsum(flat, axis=1) - 1).reshape(n, nl, m)
            rows, li, ji = np.nonzero(gm_t)
            dest = m + rank[rows, li, ji]
            nw[rows, dest] = wdet[rows, ji, li]
            nmu[rows, dest] = mu_corr[rows, ji, li]
            ncov[rows, dest] = cov_corr[rows, ji]
        mass_post = nw.sum(axis=1)

        # particle weighting
        log_f, truncations = self._log_factors(
            z0, nlos, zr, zb, log_kappa, states, nw, nmu, ncov,
            mass_prior, mass_post, pd, denom,
        )
        with np.errstate(divide="ignore"):
            log_w = (
                np.where(self.weights > 0.0, np.log(np.maximum(self.weights, 1e-300)), _NEG_INF)
                + log_f
            )
        norm = float(logsumexp(log_w))
        if not np.isfinite(norm):
            self.weights = np.full(n, 1.0 / n)
            reset = True
        else:
            w = np.exp(log_w - norm)
            self.weights = w / float(np.sum(w))
            reset = False

        # pending births for the next step
        if nl:
            matched = gmask.any(axis=1)
            um = ~matched
            self.pcount = um.sum(axis=1)
            p_new = int(self.pcount.max())
            self.pz = np.zeros((n, p_new, 2))
            if p_new:
                rank = np.cumsum(um, axis=1) - 1
                rows, cols = np.nonzero(um)
                self.pz[rows, rank[rows, cols], 0] = zr[cols]
                self.pz[rows, rank[rows, cols], 1] = zb[cols]
        else:
            self.pz = np.zeros((n, 0, 2))
            self.pcount = np.zeros(n, dtype=int)

        # map hygiene
        self._prune_merge(nw, nmu, ncov)

        # resampling and estimation
        ess = effective_sample_size(self.weights)
        resampled = False
        if ess < params.ess_fraction * n:
            idx = systematic_resample(self.weights, self.rng)
            self.states = self.states[idx].copy()
            self.mw = self.mw[idx].copy()
            self.mmu = self.mmu[idx].copy()
            self.mcov = self.mcov[idx].copy()
            self.mcount = self.mcount[idx].copy()
            self.pz = self.pz[idx].copy()
            self.pcount = self.pcount[idx].copy()
            self.weights = np.full(n, 1.0 / n)
            resampled = True

        agent = AgentState.from_vector(self.weights @ self.states)
        best = int(np.argmax(self.weights))
        vts = extract_map(self._particle_map(best), params.extract_threshold)
        events = StepEvents(
            bias_clamps=clamps,
            cov_repairs=repairs,
            association_truncations=truncations,
            weight_resets=int(reset),
        )
        return StepResult(agent=agent, vts=vts, ess=ess, resampled=resampled, events=events)

    # -- weighting ------------------------------------------------------

    def _log_factors(
        self, z0, nlos, zr, zb, log_kappa, states, nw, nmu, ncov,
        mass_prior, mass_post, pd_pred, denom,
    ) -> tuple[np.ndarray, int]:
        params, sensor = self.params, self.sensor
        n = len(self.weights)
        nl = len(nlos)
        log_f = np.zeros(n)

        if z0 is not None:
            dxa = self.anchor[0] - states[:, 0]
            dya = self.anchor[1] - states[:, 1]
            dist0 = np.sqrt(dxa * dxa + dya * dya)
            rhat0 = (dist0 + states[:, 4]) + 0.0
            bhat0 = wrap_angle(np.arctan2(dya, dxa))
            rd0 = (z0.range - rhat0) / sensor.sigma_d0
            bd0 = wrap_angle(z0.bearing - bhat0) / sensor.sigma_theta0
            log_f += (
                -_LOG_2PI
                - math.log(sensor.sigma_d0 * sensor.sigma_theta0)
                - 0.5 * (rd0 * rd0 + bd0 * bd0)
            )

        strategy = params.strategy
        lam = sensor.lambda_clutter
        if strategy is WeightStrategy.CLOSED_FORM_SINGLE_CLUSTER:
            with np.errstate(divide="ignore"):
                log_denom = np.where(
                    denom > 0.0, np.log(np.maximum(denom, 1e-300)), _NEG_INF
                )
            log_f += -lam - (pd_pred * self.mw).sum(axis=1) + log_denom.sum(axis=1)
            return log_f, 0

        if strategy is WeightStrategy.EMPTY_SET:
            log_f += float(np.sum(log_kappa)) - lam + (mass_post - mass_prior)
            return log_f, 0

        # feature extraction (with multiplicity) from the pre-prune posterior
        copies = np.where(
            nw >= 1.5, np.rint(nw), np.where(nw >= params.extract_threshold, 1.0, 0.0)
        ).astype(int)
        if strategy is WeightStrategy.SINGLE_FEATURE:
            has = copies.sum(axis=1) > 0
            fcount = has.astype(int)
            nf = 1 if has.any() else 0
            feats = np.zeros((n, nf, 3))
            if nf:
                best = np.argmax(nw, axis=1)
                feats[:, 0, :] = nmu[np.arange(n), best]
        else:
            fcount = copies.sum(axis=1)
            nf = int(fcount.max()) if len(fcount) else 0
            feats = np.zeros((n, nf, 3))
            if nf:
                rows, cols = np.nonzero(copies)
                reps = copies[rows, cols]
                fr = np.repeat(rows, reps)
                fmu = np.repeat(nmu[rows, cols], reps, axis=0)
                starts = np.cumsum(fcount) - fcount
                frank = np.arange(len(fr)) - starts[fr]
                feats[fr, frank] = fmu

        if nf == 0:
            log_f += float(np.sum(log_kappa)) - lam + (mass_post - mass_prior)
            return log_f, 0

        fmask = np.arange(nf)[None, :] < fcount[:, None]
        fdx = feats[..., 0] - states[:, 0, None]
        fdy = feats[..., 1] - states[:, 1, None]
        fdist = np.sqrt(fdx * fdx + fdy * fdy)
        pdf = np.where(fdist <= sensor.fov_radius, sensor.p_detect, 0.0) * fmask
        with np.errstate(divide="ignore"):
            log_miss = np.where(pdf < 1.0, np.log1p(-pdf), _NEG_INF)
        if nl:
            rhatf = (fdist + states[:, 4, None]) + np.maximum(feats[..., 2], 0.0)
            bhatf = wrap_angle(np.arctan2(fdy, fdx))
            rdf = (zr[None, None, :] - rhatf[..., None]) / sensor.sigma_d
            bdf = wrap_angle(zb[None, None, :] - bhatf[..., None]) / sensor.sigma_theta
            mahaf = rdf * rdf + bdf * bdf
            log_norm = -_LOG_2PI - math.log(sensor.sigma_d * sensor.sigma_theta)
            with np.errstate(divide="ignore"):
                log_pd = np.where(pdf > 0.0, np.log(np.maximum(pdf, 1e-300)), _NEG_INF)
            ok = (mahaf <= params.gate_threshold) & (pdf > 0.0)[..., None] & fmask[..., None]
            log_pair = np.where(ok, log_pd[..., None] + log_norm - 0.5 * mahaf, _NEG_INF)
        else:
            log_pair = np.zeros((n, nf, 0))

        # PPP set-density ratio: intensity of prior vs posterior mixtures at
        # the conditioning features
        lv_prior = self._log_intensity(feats, self.mw, self.mmu, self.mcov)
        lv_post = self._log_intensity(feats, nw, nmu, ncov)
        with np.errstate(invalid="ignore"):
            ratio = np.where(fmask, lv_prior - lv_post, 0.0)
        log_f += ratio.sum(axis=1) + (mass_post - mass_prior) - lam

        truncations = 0
        log_mol = np.empty(n)
        for i in range(n):
            fc = int(fcount[i])
            res = log_association_sum(
                log_kappa, log_miss[i, :fc], log_pair[i, :fc], budget=params.association_budget
            )
            log_mol[i] = res.log_value
            truncations += int(res.truncated)
        return log_f + log_mol, truncations

    def _log_intensity(self, points, w, mu, cov) -> np.ndarray:
        """log PHD intensity of each particle's mixture at its feature points."""
        n, nf, _ = points.shape
        m = w.shape[1]
        if m == 0:
            return np.full((n, nf), _NEG_INF)
        inv = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        diff = points[:, :, None, :] - mu[:, None, :, :]
        maha = np.einsum("nfmi,nmij,nfmj->nfm", diff, inv, diff)
        with np.errstate(divide="ignore"):
            log_w = np.where(w > 0.0, np.log(np.maximum(w, 1e-300)), _NEG_INF)
        terms = log_w[:, None, :] - 0.5 * (3.0 * _LOG_2PI + logdet[:, None, :] + maha)
        return logsumexp(terms, axis=2)

    # -- map hygiene ------------------------------------------------------

    def _prune_merge(self, w, mu, cov) -> None:
        params = self.params
        n = len(self.weights)
        keep = w >= params.prune_threshold
        counts = keep.sum(axis=1)
        mk = int(counts.max()) if counts.size else 0
        pw = np.zeros((n, mk))
        pmu = _pad_mu(n, mk)
        pcov = _pad_cov(n, mk)
        if mk:
            rank = np.cumsum(keep, axis=1) - 1
            rows, cols = np.nonzero(keep)
            pw[rows, rank[rows, cols]] = w[rows, cols]
            pmu[rows, rank[rows, cols]] = mu[rows, cols]
            pcov[rows, rank[rows, cols]] = cov[rows, cols]

        ow = np.zeros((n, mk))
        omu = _pad_mu(n, mk)
        ocov = _pad_cov(n, mk)
        on = np.zeros(n, dtype=int)
        if mk:
            alive = np.arange(mk)[None, :] < counts[:, None]
            ar = np.arange(n)
            while True:
                act = alive.any(axis=1)
                if not act.any():
                    break
                wm = np.where(alive, pw, -1.0)
                j = np.argmax(wm, axis=1)
                inv_j = np.linalg.inv(pcov[ar, j])
                d = pmu - pmu[ar, j][:, None, :]
                maha = np.einsum("nki,nij,nkj->nk", d, inv_j, d)
                grp = alive & (maha <= params.merge_threshold) & act[:, None]
                wg = np.where(grp, pw, 0.0)
                ws = wg.sum(axis=1)
                ws_safe = np.where(ws > 0.0, ws, 1.0)
                mug = (wg[..., None] * pmu).sum(axis=1) / ws_safe[:, None]
                diff = pmu - mug[:, None, :]
                cg = (
                    wg[..., None, None]
                    * (pcov + diff[..., :, None] * diff[..., None, :])
                ).sum(axis=1) / ws_safe[:, None, None]
                cg = 0.5 * (cg + np.swapaxes(cg, -1, -2))
                rows = np.nonzero(act)[0]
                ow[rows, on[rows]] = ws[rows]
                omu[rows, on[rows]] = mug[rows]
                ocov[rows, on[rows]] = cg[rows]
                on[rows] += 1
                alive &= ~grp

        cap = params.max_components
        if on.max(initial=0) > cap:
            over = on > cap
            mass = ow.sum(axis=1)
            order = np.argsort(-ow, axis=1, kind="stable")
            kept = np.arange(mk)[None, :] < on[:, None]
            capped = np.zeros_like(kept)
            rows = np.nonzero(over)[0]
            capped[rows[:, None], order[rows, :cap]] = True
            kept = np.where(over[:, None], capped, kept)
            counts2 = kept.sum(axis=1)
            mk2 = int(counts2.max())
            cw = np.zeros((n, mk2))
            cmu = _pad_mu(n, mk2)
            ccov = _pad_cov(n, mk2)
            rank = np.cumsum(kept, axis=1) - 1
            rows, cols = np.nonzero(kept)
            cw[rows, rank[rows, cols]] = ow[rows, cols]
            cmu[rows, rank[rows, cols]] = omu[rows, cols]
            ccov[rows, rank[rows, cols]] = ocov[rows, cols]
            kept_mass = cw.sum(axis=1)
            scale = np.where(
                over & (kept_mass > 0.0), mass / np.maximum(kept_mass, 1e-300), 1.0
            )
            cw = cw * scale[:, None]
            ow, omu, ocov, on = cw, cmu, ccov, counts2

        mtrim = int(on.max(initial=0))
        self.mw = ow[:, :mtrim]
        self.mmu = omu[:, :mtrim]
        self.mcov = ocov[:, :mtrim]
        self.mcount = on

    # -- inspection -------------------------------------------------------

    def _particle_map(self, i: int) -> GaussianMixtureMap:
        c = int(self.mcount[i])
        if c == 0:
            return GaussianMixtureMap.empty()
        return GaussianMixtureMap(
            self.mw[i, :c].copy(), self.mmu[i, :c].copy(), self.mcov[i, :c].copy()
        )

    def snapshot(self) -> dict:
        n = len(self.weights)
        return {
            "states": self.states.copy(),
            "weights": self.weights.copy(),
            "maps": [
                (
                    self.mw[i, : self.mcount[i]].copy(),
                    self.mmu[i, : self.mcount[i]].copy(),
                    self.mcov[i, : self.mcount[i]].copy(),
                )
                for i in range(n)
            ],
            "pending": [self.pz[i, : self.pcount[i]].copy() for i in range(n)],
        }

    def materialize_particles(self) -> list[Particle]:
        out = []
        for i in range(len(self.weights)):
            pending = tuple(
                RangeBearing(range=float(r), bearing=float(b))
                for r, b in self.pz[i, : self.pcount[i]]
            )
            out.append(
                Particle(
                    state=AgentState.from_vector(self.states[i]),
                    weight=float(self.weights[i]),
                    map=self._particle_map(i),
                    pending_births=pending,
                )
            )
        return out
