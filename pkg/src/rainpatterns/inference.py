"""Gibbs sampling of the latent state interleaved with ML parameter updates.

Each sweep resamples every cell state, then every day label, then every
location label, then refreshes the canonical patterns and the estimated
parameters from the current assignment.  The posterior point estimate is the
per-variable mode over the retained sweeps.

Two sweep schedules are provided.  ``sequential`` visits cells in raster
order with scalar updates; ``checkerboard`` partitions the space-time lattice
into eight colour classes of mutually non-adjacent cells and updates each
class with one vectorised draw.  Updating a class at once is an ordinary
Gibbs scan in a different visit order, because cells of one class are
conditionally independent given the rest, so both schedules target the same
distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import NumericError, ValidationError
from .model import (HIGH, LOW, RAIN_EPS, VAR_FLOOR, LatentState, ModelParams,
                    PatternSet, crp_log_prior_days, crp_log_weights_days,
                    crp_log_weights_locations, extract_patterns,
                    joint_log_density, log_gamma_density,
                    log_potential_aggregate, log_potential_day_align,
                    log_potential_loc_align, log_potential_spatial,
                    log_potential_temporal)

SCHEDULES = ("sequential", "checkerboard")
INIT_STRATEGIES = ("data", "pattern", "random")


@dataclass
class SamplerConfig:
    """Sweep counts, seed, schedule and initialisation strategy."""

    n_burnin: int = 200
    n_samples: int = 300
    seed: int = 0
    schedule: str = "checkerboard"
    init: str = "data"

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValidationError("need at least one retained sweep")
        if self.n_burnin < 0:
            raise ValidationError("burn-in must be non-negative")
        if self.schedule not in SCHEDULES:
            raise ValidationError(f"schedule must be one of {SCHEDULES}")
        if self.init not in INIT_STRATEGIES:
            raise ValidationError(f"init must be one of {INIT_STRATEGIES}")


@dataclass
class PosteriorSummary:
    """Per-variable modes over retained sweeps plus the log-density trace."""

    z_mode: np.ndarray
    u_mode: np.ndarray
    v_mode: np.ndarray
    n_retained: int
    log_density_trace: np.ndarray

    def as_state(self) -> LatentState:
        return LatentState(self.z_mode.copy(), self.u_mode.copy(),
                           self.v_mode.copy())


def _sample_from_log_weights(logw: np.ndarray, rng) -> int:
    """Draw an index proportionally to exp(logw), stably."""
    p = np.exp(logw - logw.max())
    c = np.cumsum(p)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def _leader_init(states: np.ndarray, cap: int) -> np.ndarray:
    """Group days by state-vector similarity: greedy leader clustering.

    A day joins the nearest leader if it disagrees on at most a quarter of
    the locations, else founds a new leader while fewer than ``cap`` exist.
    Deterministic given the states.
    """
    S, T = states.shape
    thresh = S / 4.0
    leaders: list[np.ndarray] = []
    labels = np.empty(T, dtype=np.int64)
    for t in range(T):
        col = states[:, t]
        if leaders:
            dists = np.array([(lead != col).sum() for lead in leaders])
            best = int(dists.argmin())
        else:
            best = -1
        if best >= 0 and (dists[best] <= thresh or len(leaders) >= cap):
            labels[t] = best + 1
        else:
            leaders.append(col.copy())
            labels[t] = len(leaders)
    return labels


def sample_z_cell(s: int, t: int, state: LatentState, params: ModelParams,
                  weights, patterns: PatternSet, data, rng) -> int:
    """Draw a cell state from its exact conditional distribution.

    Reference implementation assembled from the individual potentials; the
    sweep engines must agree with it.
    """
    z = state.states
    T = z.shape[1]
    x = float(data.rain[s, t])
    logw = np.zeros(2)
    for i, cand in enumerate((HIGH, LOW)):
        w = 0.0
        for t2 in (t - 1, t + 1):
            if 0 <= t2 < T:
                w += log_potential_temporal(cand, int(z[s, t2]),
                                            params.temporal_factor)
        nb = data.neighborhoods[s]
        for k in range(len(nb)):
            w += log_potential_spatial(cand, int(z[nb[k], t]),
                                       float(weights.values[s][k]))
        w += log_potential_day_align(cand, int(state.day_labels[t]), s,
                                     patterns, params.day_align)
        w += log_potential_loc_align(cand, int(state.loc_labels[s]), t,
                                     patterns, params.loc_align)
        w += log_gamma_density(x, float(params.gamma_shape[s, cand - 1]),
                               float(params.gamma_rate[s, cand - 1]))
        logw[i] = w
    return (HIGH, LOW)[_sample_from_log_weights(logw, rng)]


def _day_candidates(t: int, state: LatentState, params: ModelParams,
                    patterns: PatternSet, data):
    """Candidate labels and log-weights for reassigning day t.

    Labels currently in use elsewhere get the clustering prior weight plus
    alignment and aggregate terms; the fresh label is neutral beyond its
    concentration weight, even if a stale pattern row exists at its index.
    """
    crp = crp_log_weights_days(t, state.day_labels, data.year_of_day,
                               params.day_concentration)
    others = np.delete(state.day_labels, t)
    existing = set(int(u) for u in np.unique(others))
    y_t = float(data.rain[:, t].sum())
    z_col = state.states[:, t]
    labels = sorted(crp)
    logw = np.empty(len(labels))
    for i, u in enumerate(labels):
        w = crp[u]
        if u in existing:
            row = u - 1
            if row < patterns.n_day_patterns:
                matches = int((patterns.state_patterns[row] == z_col).sum())
                w += params.day_align * matches
            w += log_potential_aggregate(u, y_t, params.aggregate_mean,
                                         params.aggregate_sd)
        logw[i] = w
    return labels, logw


def sample_u_day(t: int, state: LatentState, params: ModelParams,
                 patterns: PatternSet, data, rng) -> int:
    """Draw a day's cluster label from its conditional distribution."""
    labels, logw = _day_candidates(t, state, params, patterns, data)
    return labels[_sample_from_log_weights(logw, rng)]


def _loc_candidates(s: int, state: LatentState, params: ModelParams,
                    patterns: PatternSet, data):
    crp = crp_log_weights_locations(s, state.loc_labels,
                                    params.loc_concentration)
    others = np.delete(state.loc_labels, s)
    existing = set(int(v) for v in np.unique(others))
    z_row = state.states[s, :]
    labels = sorted(crp)
    logw = np.empty(len(labels))
    for i, v in enumerate(labels):
        w = crp[v]
        if v in existing:
            row = v - 1
            if row < patterns.n_loc_series:
                matches = int((patterns.state_series[row] == z_row).sum())
                w += params.loc_align * matches
        logw[i] = w
    return labels, logw


def sample_v_location(s: int, state: LatentState, params: ModelParams,
                      patterns: PatternSet, data, rng) -> int:
    """Draw a location's cluster label from its conditional distribution."""
    labels, logw = _loc_candidates(s, state, params, patterns, data)
    return labels[_sample_from_log_weights(logw, rng)]


def update_params_ml(data, state: LatentState):
    """Moment-matched Gamma parameters and per-cluster aggregate means.

    For each location and state the Gamma shape and rate come from the sample
    mean and variance of the member rainfall values (variance with n-1
    denominator; zero when fewer than two members).  Floors on the variance
    and mean absorb degenerate cells.

    Returns (shape, rate, aggregate_mean).
    """
    rain = data.rain
    S, T = rain.shape
    shape = np.empty((S, 2))
    rate = np.empty((S, 2))
    for k, code in enumerate((HIGH, LOW)):
        mask = state.states == code
        n = mask.sum(axis=1)
        sx = (rain * mask).sum(axis=1)
        sxx = (rain * rain * mask).sum(axis=1)
        m = np.divide(sx, n, out=np.zeros(S), where=n > 0)
        v = np.zeros(S)
        two = n >= 2
        v[two] = (sxx[two] - n[two] * m[two] ** 2) / (n[two] - 1)
        v = np.maximum(v, VAR_FLOOR)
        m = np.maximum(m, RAIN_EPS)
        shape[:, k] = m * m / v
        rate[:, k] = m / v
    y = rain.sum(axis=0)
    K = state.n_day_clusters
    counts = np.bincount(state.day_labels - 1, minlength=K)
    sums = np.bincount(state.day_labels - 1, weights=y, minlength=K)
    mu = sums / counts
    return shape, rate, mu


class _GibbsEngine:
    """Owns the mutable sampling state for one run.

    With ``frozen`` set, patterns and parameters are never refreshed, day
    labels are restricted to the frozen patterns plus one overflow label, and
    location labels to the frozen series plus one overflow label.
    """

    def __init__(self, data, weights, params: ModelParams,
                 config: SamplerConfig, frozen: PatternSet | None = None):
        config.validate()
        params.validate()
        self.data = data
        self.weights = weights
        self.config = config
        self.frozen = frozen is not None
        self.rng = np.random.default_rng(config.seed)
        self.params = params
        # alignment annealing factor; run() ramps it over early burn-in
        self.align_scale = 1.0

        rain = data.rain
        self.S, self.T = rain.shape
        self.y = rain.sum(axis=0)
        self.logx = np.log(np.maximum(rain, RAIN_EPS))
        self.log_tf = math.log(params.temporal_factor)
        self.year_vals, self.year_idx = np.unique(data.year_of_day,
                                                  return_inverse=True)
        self.n_years = len(self.year_vals)

        # padded neighbour tables for the vectorised spatial term
        max_deg = max((len(nb) for nb in data.neighborhoods), default=0)
        max_deg = max(max_deg, 1)
        self.nbr_pad = np.zeros((self.S, max_deg), dtype=np.intp)
        self.w_pad = np.zeros((self.S, max_deg))
        for s, nb in enumerate(data.neighborhoods):
            self.nbr_pad[s, :len(nb)] = nb
            self.w_pad[s, :len(nb)] = np.maximum(weights.values[s], 0.0)

        # eight-colour partition of the space-time lattice: cells sharing a
        # colour agree in both coordinate parities and day parity, so they are
        # never spatial or temporal neighbours of one another
        gx = data.grid_coords[:, 0] % 2
        gy = data.grid_coords[:, 1] % 2
        cell_color = ((gx * 2 + gy)[:, None] * 2 + (np.arange(self.T) % 2)[None, :])
        self.color_cells = [np.nonzero(cell_color == c) for c in range(8)]

        self._init_state(frozen)
        if self.frozen:
            self.patterns = frozen
            if params.gamma_shape is None or params.gamma_rate is None:
                raise ValidationError("frozen runs need Gamma parameters")
            if params.aggregate_mean is None \
                    or len(params.aggregate_mean) != frozen.n_day_patterns:
                raise ValidationError("frozen runs need one aggregate mean "
                                      "per frozen pattern")
            self.mu = np.asarray(params.aggregate_mean, dtype=float)
            self.alpha = params.gamma_shape
            self.beta = params.gamma_rate
            self._refresh_logdens()
        else:
            self.refresh()

        self.trace: list[float] = []
        self.z1_count = np.zeros((self.S, self.T), dtype=np.int32)
        self.u_count = np.zeros((self.T, 8), dtype=np.int32)
        self.v_count = np.zeros((self.S, 8), dtype=np.int32)
        self.n_retained = 0

    # ---------------------------------------------------------------- setup

    def _init_state(self, frozen: PatternSet | None) -> None:
        from .data import discretize_by_mean

        if self.config.init == "random":
            states = self.rng.integers(HIGH, LOW + 1,
                                       size=(self.S, self.T)).astype(np.int8)
        else:
            states = discretize_by_mean(self.data)

        if frozen is not None:
            # start every day and location at its best-matching frozen pattern
            p1 = (frozen.state_patterns == HIGH).astype(float)
            z1 = (states == HIGH).astype(float)
            match_u = p1 @ z1 + (1.0 - p1) @ (1.0 - z1)
            day_labels = match_u.argmax(axis=0) + 1
            if frozen.state_series.shape[1] == self.T:
                c1 = (frozen.state_series == HIGH).astype(float)
                match_v = c1 @ z1.T + (1.0 - c1) @ (1.0 - z1.T)
                loc_labels = match_v.argmax(axis=0) + 1
            else:
                # frozen series are indexed by the training days and cannot
                # align with a different record length
                loc_labels = np.ones(self.S, dtype=np.int64)
        elif self.config.init == "random":
            k0 = math.isqrt(self.T - 1) + 1
            day_labels = self.rng.integers(1, k0 + 1, size=self.T)
            day_labels = np.unique(day_labels, return_inverse=True)[1] + 1
            loc_labels = np.ones(self.S, dtype=np.int64)
        elif self.config.init == "pattern":
            day_labels = _leader_init(states, math.isqrt(self.T - 1) + 1)
            loc_labels = np.ones(self.S, dtype=np.int64)
        else:
            # quantile-bin days on total rainfall into ~sqrt(T) starting bins
            k0 = math.isqrt(self.T - 1) + 1
            ranks = np.empty(self.T, dtype=np.int64)
            ranks[np.argsort(self.y, kind="stable")] = np.arange(self.T)
            day_labels = 1 + (ranks * k0) // self.T
            loc_labels = np.ones(self.S, dtype=np.int64)

        self.state = LatentState(states,
                                 np.asarray(day_labels, dtype=np.int64),
                                 np.asarray(loc_labels, dtype=np.int64))

    def refresh(self) -> None:
        """Re-extract patterns and re-estimate parameters from the state."""
        self.patterns = extract_patterns(self.data, self.state)
        self.alpha, self.beta, self.mu = update_params_ml(self.data, self.state)
        self._refresh_logdens()

    def _refresh_logdens(self) -> None:
        ld = np.empty((2, self.S, self.T))
        for k in range(2):
            a = self.alpha[:, k][:, None]
            b = self.beta[:, k][:, None]
            ld[k] = (a * np.log(b) + (a - 1.0) * self.logx
                     - b * self.data.rain - gammaln(a))
        self.logdens = ld

    def snapshot_params(self) -> ModelParams:
        return self.params.replace(gamma_shape=self.alpha,
                                   gamma_rate=self.beta,
                                   aggregate_mean=self.mu)

    # -------------------------------------------------------------- Z sweep

    def _z_local_log_weights(self, s_arr, t_arr):
        """Vectorised conditional log-weights for both states of given cells."""
        z = self.state.states
        p = self.params
        n = len(s_arr)
        w = np.zeros((2, n))

        for dt in (-1, 1):
            t2 = t_arr + dt
            ok = (t2 >= 0) & (t2 < self.T)
            znb = z[s_arr[ok], t2[ok]]
            w[0][ok] += self.log_tf * (znb == HIGH)
            w[1][ok] += self.log_tf * (znb == LOW)

        znb = z[self.nbr_pad[s_arr], t_arr[:, None]]
        wgt = self.w_pad[s_arr]
        w[0] += (wgt * (znb == HIGH)).sum(axis=1)
        w[1] += (wgt * (znb == LOW)).sum(axis=1)

        eta = p.day_align * self.align_scale
        zeta = p.loc_align * self.align_scale
        rows_u = self._rowmap_u[self.state.day_labels[t_arr] - 1]
        ok = rows_u >= 0
        pat = self.patterns.state_patterns[rows_u[ok], s_arr[ok]]
        w[0][ok] += eta * (pat == HIGH)
        w[1][ok] += eta * (pat == LOW)

        rows_v = self._rowmap_v[self.state.loc_labels[s_arr] - 1]
        ok = rows_v >= 0
        ser = self.patterns.state_series[rows_v[ok], t_arr[ok]]
        w[0][ok] += zeta * (ser == HIGH)
        w[1][ok] += zeta * (ser == LOW)

        w[0] += self.logdens[0, s_arr, t_arr]
        w[1] += self.logdens[1, s_arr, t_arr]
        return w

    def _set_rowmaps(self) -> None:
        """Label -> pattern-row maps (-1 where a label has no pattern)."""
        K = self.state.n_day_clusters
        L = self.state.n_loc_clusters
        if self.frozen:
            ku = self.patterns.n_day_patterns
            kv = self.patterns.n_loc_series
            if self.patterns.state_series.shape[1] != self.T:
                kv = 0
            self._rowmap_u = np.array(
                [i if i < ku else -1 for i in range(max(K, ku + 1))], dtype=np.intp)
            self._rowmap_v = np.array(
                [i if i < kv else -1 for i in range(max(L, kv + 1))], dtype=np.intp)
        else:
            ku = self.patterns.n_day_patterns
            kv = self.patterns.n_loc_series
            self._rowmap_u = np.array(
                [i if i < ku else -1 for i in range(K)], dtype=np.intp)
            self._rowmap_v = np.array(
                [i if i < kv else -1 for i in range(L)], dtype=np.intp)

    def z_sweep(self) -> None:
        self._set_rowmaps()
        if self.config.schedule == "checkerboard":
            for s_arr, t_arr in self.color_cells:
                if len(s_arr) == 0:
                    continue
                w = self._z_local_log_weights(s_arr, t_arr)
                p_low = 1.0 / (1.0 + np.exp(w[0] - w[1]))
                draws = self.rng.random(len(s_arr))
                self.state.states[s_arr, t_arr] = np.where(
                    draws < p_low, LOW, HIGH).astype(np.int8)
        else:
            s_one = np.empty(1, dtype=np.intp)
            t_one = np.empty(1, dtype=np.intp)
            for t in range(self.T):
                t_one[0] = t
                for s in range(self.S):
                    s_one[0] = s
                    w = self._z_local_log_weights(s_one, t_one)
                    p_low = 1.0 / (1.0 + math.exp(w[0, 0] - w[1, 0]))
                    self.state.states[s, t] = LOW if self.rng.random() < p_low \
                        else HIGH

    # -------------------------------------------------------- label sweeps

    def _day_align_matrix(self) -> np.ndarray:
        p1 = (self.patterns.state_patterns == HIGH).astype(np.float64)
        z1 = (self.state.states == HIGH).astype(np.float64)
        return p1 @ z1 + (1.0 - p1) @ (1.0 - z1)  # (K_pat, T)

    def _loc_align_matrix(self) -> np.ndarray:
        if self.patterns.state_series.shape[1] != self.T:
            return np.zeros((self.patterns.n_loc_series, self.S))
        c1 = (self.patterns.state_series == HIGH).astype(np.float64)
        z1 = (self.state.states == HIGH).astype(np.float64)
        return c1 @ z1.T + (1.0 - c1) @ (1.0 - z1.T)  # (L_pat, S)

    def u_sweep(self) -> None:
        if self.frozen:
            self._u_sweep_frozen()
            return
        p = self.params
        align = self._day_align_matrix()
        labels = self.state.day_labels
        rows = list(range(self.patterns.n_day_patterns))
        ny = self.n_years
        for t in range(self.T):
            old = int(labels[t])
            labels[t] = 0
            counts = np.bincount(labels, minlength=len(rows) + 2)[1:]
            pair = labels * ny + self.year_idx
            year_tab = np.bincount(pair, minlength=(len(rows) + 2) * ny)
            year_tab = year_tab.reshape(-1, ny)[1:]
            m = (year_tab > 0).sum(axis=1)

            cand: list[int] = []
            logw: list[float] = []
            top = 0
            for u in range(1, len(counts) + 1):
                c = counts[u - 1]
                if c == 0:
                    continue
                top = u
                w = math.log(c * m[u - 1])
                row = rows[u - 1]
                if row >= 0:
                    w += p.day_align * self.align_scale * align[row, t]
                    w += log_potential_aggregate(row + 1, self.y[t], self.mu,
                                                 p.aggregate_sd)
                cand.append(u)
                logw.append(w)
            fresh = top + 1
            cand.append(fresh)
            logw.append(math.log(p.day_concentration))

            pick = cand[_sample_from_log_weights(np.array(logw), self.rng)]
            labels[t] = pick
            if pick == fresh:
                while len(rows) < fresh:
                    rows.append(-1)
            if old != pick and old != 0 and counts[old - 1] == 0 \
                    and old <= len(rows):
                labels[labels > old] -= 1
                del rows[old - 1]

    def _u_sweep_frozen(self) -> None:
        """Frozen-pattern day sweep: fixed labels 1..K plus one overflow.

        Frozen patterns stay enterable even when currently empty (their count
        is floored at one); the overflow label acts as a fresh cluster while
        empty and as an ordinary one while occupied.
        """
        p = self.params
        align = self._day_align_matrix()
        labels = self.state.day_labels
        K = self.patterns.n_day_patterns
        ny = self.n_years
        for t in range(self.T):
            labels[t] = 0
            counts = np.bincount(labels, minlength=K + 2)[1:K + 2]
            pair = labels * ny + self.year_idx
            year_tab = np.bincount(pair, minlength=(K + 2) * ny)
            year_tab = year_tab.reshape(-1, ny)[1:K + 2]
            m = (year_tab > 0).sum(axis=1)

            logw = np.empty(K + 1)
            for u in range(1, K + 1):
                nm = max(int(counts[u - 1]) * int(m[u - 1]), 1)
                logw[u - 1] = (math.log(nm) + p.day_align * align[u - 1, t]
                               + log_potential_aggregate(u, self.y[t], self.mu,
                                                         p.aggregate_sd))
            if counts[K] > 0:
                logw[K] = math.log(int(counts[K]) * int(m[K]))
            else:
                logw[K] = math.log(p.day_concentration)
            labels[t] = 1 + _sample_from_log_weights(logw, self.rng)

    def v_sweep(self) -> None:
        if self.frozen:
            self._v_sweep_frozen()
            return
        p = self.params
        align = self._loc_align_matrix()
        labels = self.state.loc_labels
        rows = list(range(self.patterns.n_loc_series))
        for s in range(self.S):
            old = int(labels[s])
            labels[s] = 0
            counts = np.bincount(labels, minlength=len(rows) + 2)[1:]

            cand: list[int] = []
            logw: list[float] = []
            top = 0
            for v in range(1, len(counts) + 1):
                c = counts[v - 1]
                if c == 0:
                    continue
                top = v
                w = math.log(c)
                row = rows[v - 1]
                if row >= 0:
                    w += p.loc_align * self.align_scale * align[row, s]
                cand.append(v)
                logw.append(w)
            fresh = top + 1
            cand.append(fresh)
            logw.append(math.log(p.loc_concentration))

            pick = cand[_sample_from_log_weights(np.array(logw), self.rng)]
            labels[s] = pick
            if pick == fresh:
                while len(rows) < fresh:
                    rows.append(-1)
            if old != pick and old != 0 and counts[old - 1] == 0 \
                    and old <= len(rows):
                labels[labels > old] -= 1
                del rows[old - 1]

    def _v_sweep_frozen(self) -> None:
        p = self.params
        align = self._loc_align_matrix()
        labels = self.state.loc_labels
        L = self.patterns.n_loc_series
        for s in range(self.S):
            labels[s] = 0
            counts = np.bincount(labels, minlength=L + 2)[1:L + 2]
            logw = np.empty(L + 1)
            for v in range(1, L + 1):
                logw[v - 1] = (math.log(max(int(counts[v - 1]), 1))
                               + p.loc_align * align[v - 1, s])
            if counts[L] > 0:
                logw[L] = math.log(int(counts[L]))
            else:
                logw[L] = math.log(p.loc_concentration)
            labels[s] = 1 + _sample_from_log_weights(logw, self.rng)

    # --------------------------------------------------------------- merges

    def _merge_stats(self):
        """Per-cluster counts, wet counts, and aggregate sums for merges."""
        labels = self.state.day_labels
        K = int(labels.max())
        onehot = np.zeros((K, self.T))
        onehot[labels - 1, np.arange(self.T)] = 1.0
        n = onehot.sum(axis=1)
        wet = onehot @ (self.state.states == HIGH).T.astype(float)  # (K, S)
        sy = onehot @ self.y
        syy = onehot @ (self.y * self.y)
        return K, n, wet, sy, syy

    def _align_sum(self, wet: np.ndarray, n: float, cdp: np.ndarray) -> float:
        """Sum of member matches against one state map, from wet counts."""
        high = cdp == HIGH
        return float(wet[high].sum() + (n - wet[~high]).sum())

    def _agg_sum(self, n: float, sy: float, syy: float) -> float:
        """Aggregate log-kernel total for a cluster at its own mean."""
        if n <= 0:
            return 0.0
        mu = sy / n
        var_sum = syy - n * mu * mu
        return -0.5 * var_sum / (self.params.aggregate_sd ** 2)

    def merge_sweep(self) -> None:
        """Propose merging each cluster into its nearest-pattern peer.

        Single-label resampling mixes between duplicate clusters like an urn
        process and practically never consolidates them, so each sweep also
        proposes whole-cluster merges, accepted by the change of the plug-in
        joint density (clustering prior, alignment, and aggregate terms; the
        cell states and data terms are untouched).
        """
        p = self.params
        for _ in range(int(self.state.day_labels.max())):
            labels = self.state.day_labels
            K, n, wet, sy, syy = self._merge_stats()
            if K < 2:
                return
            cdp = np.where(2 * wet > n[:, None], HIGH, LOW).astype(np.int8)
            dist = (cdp[:, None, :] != cdp[None, :, :]).sum(axis=2)
            np.fill_diagonal(dist, self.S + 1)
            merged = False
            for u in range(1, K + 1):
                if int(self.state.day_labels.max()) < u:
                    break
                v = int(dist[u - 1].argmin()) + 1
                a, b = min(u, v), max(u, v)
                cand = labels.copy()
                cand[cand == b] = a
                cand[cand > b] -= 1

                d_crp = (crp_log_prior_days(cand, self.data.year_of_day,
                                            p.day_concentration)
                         - crp_log_prior_days(labels, self.data.year_of_day,
                                              p.day_concentration))
                wet_ab = wet[a - 1] + wet[b - 1]
                n_ab = n[a - 1] + n[b - 1]
                cdp_ab = np.where(2 * wet_ab > n_ab, HIGH, LOW).astype(np.int8)
                d_align = p.day_align * self.align_scale * (
                    self._align_sum(wet_ab, n_ab, cdp_ab)
                    - self._align_sum(wet[a - 1], n[a - 1], cdp[a - 1])
                    - self._align_sum(wet[b - 1], n[b - 1], cdp[b - 1]))
                d_agg = (self._agg_sum(n_ab, sy[a - 1] + sy[b - 1],
                                       syy[a - 1] + syy[b - 1])
                         - self._agg_sum(n[a - 1], sy[a - 1], syy[a - 1])
                         - self._agg_sum(n[b - 1], sy[b - 1], syy[b - 1]))
                delta = d_crp + d_align + d_agg
                if delta >= 0 or self.rng.random() < math.exp(delta):
                    self.state.day_labels = cand
                    merged = True
                    break
            if not merged:
                return

    # ----------------------------------------------------------------- run

    def sweep(self) -> float:
        self.z_sweep()
        self.u_sweep()
        self.v_sweep()
        if not self.frozen:
            self.merge_sweep()
            self.refresh()
        return joint_log_density(self.data, self.weights, self.state,
                                 self.snapshot_params(), self.patterns)

    def retain(self) -> None:
        self.z1_count += (self.state.states == HIGH)
        ku = int(self.state.day_labels.max())
        if ku > self.u_count.shape[1]:
            grow = np.zeros((self.T, ku - self.u_count.shape[1]), dtype=np.int32)
            self.u_count = np.hstack([self.u_count, grow])
        self.u_count[np.arange(self.T), self.state.day_labels - 1] += 1
        kv = int(self.state.loc_labels.max())
        if kv > self.v_count.shape[1]:
            grow = np.zeros((self.S, kv - self.v_count.shape[1]), dtype=np.int32)
            self.v_count = np.hstack([self.v_count, grow])
        self.v_count[np.arange(self.S), self.state.loc_labels - 1] += 1
        self.n_retained += 1

    def run(self, on_sweep=None) -> PosteriorSummary:
        total = self.config.n_burnin + self.config.n_samples
        ramp = max(1, self.config.n_burnin // 2)
        for i in range(total):
            if not self.frozen and i < self.config.n_burnin:
                self.align_scale = max(0.15, min(1.0, (i + 1) / ramp))
            else:
                self.align_scale = 1.0
            try:
                logp = self.sweep()
            except NumericError as exc:
                raise NumericError(f"sweep {i}: {exc}") from exc
            self.trace.append(logp)
            if i >= self.config.n_burnin:
                self.retain()
            if on_sweep is not None:
                on_sweep(self, i)
        return self.summary()

    def summary(self) -> PosteriorSummary:
        n = self.n_retained
        z_mode = np.where(2 * self.z1_count > n, HIGH, LOW).astype(np.int8)
        u_mode = (self.u_count.argmax(axis=1) + 1).astype(np.int64)
        v_mode = (self.v_count.argmax(axis=1) + 1).astype(np.int64)
        if not self.frozen:
            # compact the per-variable modes to dense labels
            u_mode = np.unique(u_mode, return_inverse=True)[1] + 1
            v_mode = np.unique(v_mode, return_inverse=True)[1] + 1
        return PosteriorSummary(z_mode, u_mode, v_mode, n,
                                np.array(self.trace))


def run_gibbs(data, weights, params: ModelParams, config: SamplerConfig,
              on_sweep=None):
    """Fit the model: sample the latent state and estimate parameters.

    Returns (summary, patterns, fitted_params) where the patterns and the
    Gamma/aggregate parameters are recomputed from the posterior-mode state
    so that they are mutually consistent.
    """
    engine = _GibbsEngine(data, weights, params, config)
    summary = engine.run(on_sweep=on_sweep)
    mode_state = summary.as_state()
    patterns = extract_patterns(data, mode_state)
    shape, rate, mu = update_params_ml(data, mode_state)
    fitted = params.replace(gamma_shape=shape, gamma_rate=rate,
                            aggregate_mean=mu)
    return summary, patterns, fitted


def refit_frozen(data_new, weights_new, patterns: PatternSet,
                 params: ModelParams, config: SamplerConfig,
                 on_sweep=None) -> PosteriorSummary:
    """Re-infer latent variables on new data with patterns held fixed.

    Day labels index the frozen patterns directly (label u = frozen pattern
    u); days that conform to no pattern can collect in one overflow label,
    ``patterns.n_day_patterns + 1``.  Location labels are treated the same
    way against the frozen series.  Labels are not compacted so that they
    keep indexing the frozen patterns.
    """
    if patterns.n_day_patterns < 1:
        raise ValidationError("refit needs at least one frozen pattern")
    if data_new.rain.shape[0] != patterns.rain_patterns.shape[1]:
        raise ValidationError("new data has a different number of locations "
                              "than the frozen patterns")
    engine = _GibbsEngine(data_new, weights_new, params, config,
                          frozen=patterns)
    return engine.run(on_sweep=on_sweep)
