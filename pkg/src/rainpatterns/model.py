"""Latent-variable model: states, edge potentials, cluster priors, patterns.

Every day carries a cluster label selecting a canonical spatial pattern, and
every location carries a label selecting a canonical time series.  Grid cells
hold a binary state (1 = high rainfall, 2 = low rainfall) coupled to its
spatio-temporal neighbours, to the cluster patterns, and to the observed
rainfall through a per-location two-component Gamma model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import NumericError, ValidationError

HIGH = 1  # "wet" state
LOW = 2   # "dry" state

# Rainfall floor (mm) applied before Gamma evaluation: the density is singular
# or zero at x = 0 depending on the shape, and dry days are ubiquitous.
RAIN_EPS = 0.01

# Floor for the per-cell variance in moment matching.
VAR_FLOOR = 0.01


@dataclass
class LatentState:
    """Current assignment of cell states and cluster labels.

    Attributes
    ----------
    states : ndarray, shape (S, T), values in {1, 2}
        Binary high/low rainfall state per location and day.
    day_labels : ndarray, shape (T,)
        Positive day-cluster labels, dense in {1..K}.
    loc_labels : ndarray, shape (S,)
        Positive location-cluster labels, dense in {1..L}.
    """

    states: np.ndarray
    day_labels: np.ndarray
    loc_labels: np.ndarray

    @property
    def n_day_clusters(self) -> int:
        return int(self.day_labels.max())

    @property
    def n_loc_clusters(self) -> int:
        return int(self.loc_labels.max())

    def copy(self) -> "LatentState":
        return LatentState(self.states.copy(), self.day_labels.copy(),
                           self.loc_labels.copy())

    def validate(self) -> None:
        if not np.isin(self.states, (HIGH, LOW)).all():
            raise ValidationError("cell states must be 1 (high) or 2 (low)")
        for name, labels in (("day", self.day_labels), ("loc", self.loc_labels)):
            if labels.size == 0 or labels.min() < 1:
                raise ValidationError(f"{name} labels must be positive")
            used = np.unique(labels)
            if used.size != labels.max():
                raise ValidationError(f"{name} labels must be dense 1..K")


@dataclass
class ModelParams:
    """Model parameters; scalars are user-set, arrays are model-estimated.

    ``day_concentration`` / ``loc_concentration`` are the new-cluster rates of
    the day and location clustering processes.  ``temporal_factor`` multiplies
    the joint density when temporally adjacent states agree; ``day_align`` and
    ``loc_align`` reward agreement between a cell state and its cluster's
    canonical pattern.  ``aggregate_sd`` is the shared width of the Gaussian
    kernel tying each day's total rainfall to its cluster mean.

    ``gamma_shape`` / ``gamma_rate`` are (S, 2) per-location Gamma parameters
    for the high and low states; ``aggregate_mean`` holds one mean total
    rainfall per day cluster.
    """

    day_concentration: float = 1.0
    loc_concentration: float = 1.0
    temporal_factor: float = 2.0
    day_align: float = 9.0
    loc_align: float = 3.0
    aggregate_sd: float = 1.0
    gamma_shape: np.ndarray | None = None
    gamma_rate: np.ndarray | None = None
    aggregate_mean: np.ndarray | None = None

    def validate(self) -> None:
        for name in ("day_concentration", "loc_concentration",
                     "temporal_factor", "aggregate_sd"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("day_align", "loc_align"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("gamma_shape", "gamma_rate"):
            arr = getattr(self, name)
            if arr is not None:
                if arr.ndim != 2 or arr.shape[1] != 2:
                    raise ValidationError(f"{name} must have shape (S, 2)")
                if not np.isfinite(arr).all() or (arr <= 0).any():
                    raise ValidationError(f"{name} must be finite and positive")

    def replace(self, **kw) -> "ModelParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ModelParams(**d)


@dataclass
class PatternSet:
    """Canonical patterns extracted from a latent state.

    Row u of ``rain_patterns`` is the mean rainfall map of day cluster u, and
    ``state_patterns`` its element-wise modal state map (ties resolve to the
    low state).  ``rain_series`` / ``state_series`` are the analogous canonical
    time series per location cluster.  ``pattern_volume`` is the total mm/day
    of each rain pattern.
    """

    rain_patterns: np.ndarray   # (K, S) float
    state_patterns: np.ndarray  # (K, S) in {1, 2}
    rain_series: np.ndarray     # (L, T) float
    state_series: np.ndarray    # (L, T) in {1, 2}
    day_counts: np.ndarray      # (K,)
    year_counts: np.ndarray     # (K,)
    loc_counts: np.ndarray      # (L,)
    pattern_volume: np.ndarray  # (K,)

    @property
    def n_day_patterns(self) -> int:
        return self.rain_patterns.shape[0]

    @property
    def n_loc_series(self) -> int:
        return self.rain_series.shape[0]


def log_potential_temporal(z1: int, z2: int, factor: float) -> float:
    """Log contribution of a temporal edge: log(factor) on agreement, else 0."""
    return math.log(factor) if z1 == z2 else 0.0


def log_potential_spatial(z1: int, z2: int, weight: float) -> float:
    """Log contribution of a spatial edge.

    Agreement earns the pair's correlation weight; negative correlations are
    clamped to zero so anticorrelated neighbours exert no checkerboard pull.
    """
    return max(weight, 0.0) if z1 == z2 else 0.0


def log_potential_day_align(z: int, day_label: int, s: int,
                            patterns: PatternSet, strength: float) -> float:
    """Reward for a cell state matching its day cluster's canonical state map.

    A label without a pattern row (cluster born since the last pattern
    refresh) contributes nothing.
    """
    row = day_label - 1
    if row >= patterns.n_day_patterns:
        return 0.0
    return strength if patterns.state_patterns[row, s] == z else 0.0


def log_potential_loc_align(z: int, loc_label: int, t: int,
                            patterns: PatternSet, strength: float) -> float:
    """Mirror of :func:`log_potential_day_align` for location clusters."""
    row = loc_label - 1
    if row >= patterns.n_loc_series:
        return 0.0
    return strength if patterns.state_series[row, t] == z else 0.0


def log_gamma_density(x: float, shape: float, rate: float) -> float:
    """Fully normalised Gamma log-density at max(x, RAIN_EPS)."""
    if not (shape > 0 and rate > 0):
        raise ValidationError("Gamma shape and rate must be positive")
    if x < 0:
        raise ValidationError("rainfall must be non-negative")
    xc = max(x, RAIN_EPS)
    out = shape * math.log(rate) + (shape - 1.0) * math.log(xc) \
        - rate * xc - float(gammaln(shape))
    if not math.isfinite(out):
        raise NumericError(f"non-finite Gamma log-density (shape={shape}, rate={rate})")
    return out


def log_potential_aggregate(day_label: int, y: float,
                            means: np.ndarray | None, sd: float) -> float:
    """Gaussian log-kernel tying a day's total rainfall to its cluster mean.

    Clusters without an estimated mean (newly born) are neutral.
    """
    row = day_label - 1
    if means is None or row >= len(means):
        return 0.0
    dev = (y - float(means[row])) / sd
    return -0.5 * dev * dev


def crp_log_weights_days(t: int, day_labels: np.ndarray, years: np.ndarray,
                         concentration: float) -> dict[int, float]:
    """Log-weights of the day-clustering prior for reassigning day t.

    Each existing cluster weighs n * m where n counts its member days and m
    the distinct years those days span, both excluding day t; one fresh label
    (max existing + 1) weighs ``concentration``.
    """
    mask = np.ones(day_labels.size, dtype=bool)
    mask[t] = False
    others = day_labels[mask]
    out: dict[int, float] = {}
    if others.size:
        yrs = years[mask]
        for u in np.unique(others):
            sel = others == u
            n = int(sel.sum())
            m = len(np.unique(yrs[sel]))
            out[int(u)] = math.log(n * m)
        fresh = int(others.max()) + 1
    else:
        fresh = 1
    out[fresh] = math.log(concentration)
    return out


def crp_log_weights_locations(s: int, loc_labels: np.ndarray,
                              concentration: float) -> dict[int, float]:
    """Log-weights of the location-clustering prior for reassigning location s."""
    mask = np.ones(loc_labels.size, dtype=bool)
    mask[s] = False
    others = loc_labels[mask]
    out: dict[int, float] = {}
    if others.size:
        for v, n in zip(*np.unique(others, return_counts=True)):
            out[int(v)] = math.log(int(n))
        fresh = int(others.max()) + 1
    else:
        fresh = 1
    out[fresh] = math.log(concentration)
    return out


def _mode_rows(ones_count: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Element-wise mode over {1, 2} given counts of ones; ties go to 2."""
    return np.where(2 * ones_count > totals, HIGH, LOW).astype(np.int8)


def extract_patterns(data, state: LatentState) -> PatternSet:
    """Build canonical patterns and series from a latent state.

    Rain patterns are per-cluster means of the daily rainfall vectors and
    state patterns their element-wise modal states; the location-cluster
    series are the transposed analogue over rainfall time series.
    """
    state.validate()
    rain = data.rain
    S, T = rain.shape
    z1 = (state.states == HIGH)

    K = state.n_day_clusters
    day_onehot = np.zeros((K, T))
    day_onehot[state.day_labels - 1, np.arange(T)] = 1.0
    day_counts = day_onehot.sum(axis=1)
    rain_patterns = (rain @ day_onehot.T).T / day_counts[:, None]
    wet_counts = (z1 @ day_onehot.T).T
    state_patterns = _mode_rows(wet_counts, day_counts[:, None])

    year_vals, year_idx = np.unique(data.year_of_day, return_inverse=True)
    pair = (state.day_labels - 1) * len(year_vals) + year_idx
    pair_counts = np.bincount(pair, minlength=K * len(year_vals))
    year_counts = (pair_counts.reshape(K, len(year_vals)) > 0).sum(axis=1)

    L = state.n_loc_clusters
    loc_onehot = np.zeros((L, S))
    loc_onehot[state.loc_labels - 1, np.arange(S)] = 1.0
    loc_counts = loc_onehot.sum(axis=1)
    rain_series = loc_onehot @ rain / loc_counts[:, None]
    wet_counts_s = loc_onehot @ z1
    state_series = _mode_rows(wet_counts_s, loc_counts[:, None])

    return PatternSet(
        rain_patterns=rain_patterns,
        state_patterns=state_patterns,
        rain_series=rain_series,
        state_series=state_series,
        day_counts=day_counts.astype(np.int64),
        year_counts=year_counts.astype(np.int64),
        loc_counts=loc_counts.astype(np.int64),
        pattern_volume=rain_patterns.sum(axis=1),
    )


def crp_log_prior_days(day_labels: np.ndarray, years: np.ndarray,
                       concentration: float) -> float:
    """Log-mass of a day labelling under the year-weighted sequential prior.

    Labels are canonicalised by first appearance so any dense labelling of
    the same partition scores identically.
    """
    T = day_labels.size
    canon: dict[int, int] = {}
    n: list[int] = []
    year_sets: list[set] = []
    logp = 0.0
    for t in range(T):
        u = int(day_labels[t])
        norm = concentration + sum(n[k] * len(year_sets[k]) for k in range(len(n)))
        if u in canon:
            k = canon[u]
            logp += math.log(n[k] * len(year_sets[k])) - math.log(norm)
            n[k] += 1
            year_sets[k].add(int(years[t]))
        else:
            if t > 0:  # first customer sits at the first table with mass 1
                logp += math.log(concentration) - math.log(norm)
            canon[u] = len(n)
            n.append(1)
            year_sets.append({int(years[t])})
    return logp


def crp_log_prior_locations(loc_labels: np.ndarray, concentration: float) -> float:
    """Log-mass of a location labelling under the plain sequential prior."""
    canon: dict[int, int] = {}
    n: list[int] = []
    logp = 0.0
    for s in range(loc_labels.size):
        v = int(loc_labels[s])
        norm = concentration + sum(n)
        if v in canon:
            k = canon[v]
            logp += math.log(n[k]) - math.log(norm)
            n[k] += 1
        else:
            if s > 0:
                logp += math.log(concentration) - math.log(norm)
            canon[v] = len(n)
            n.append(1)
    return logp


def joint_log_density(data, weights, state: LatentState, params: ModelParams,
                      patterns: PatternSet) -> float:
    """Log of the joint density of (states, labels, rainfall).

    Sums the two clustering priors, every temporal and spatial edge counted
    once, the pattern-alignment terms, the per-cell Gamma data terms, and the
    per-day aggregate-rainfall terms.  Labels beyond the pattern rows (or the
    aggregate means) contribute neutrally, mirroring the sampling rules.
    """
    if params.gamma_shape is None or params.gamma_rate is None:
        raise ValidationError("joint density requires estimated Gamma parameters")
    rain = data.rain
    S, T = rain.shape
    z = state.states

    logp = crp_log_prior_days(state.day_labels, data.year_of_day,
                              params.day_concentration)
    logp += crp_log_prior_locations(state.loc_labels, params.loc_concentration)

    # temporal edges, one per adjacent day pair
    logp += math.log(params.temporal_factor) * int((z[:, 1:] == z[:, :-1]).sum())

    # spatial edges, one per unordered neighbour pair
    ei, ej, w = weights.edge_arrays()
    pos = np.maximum(w, 0.0)
    logp += float((pos[:, None] * (z[ei, :] == z[ej, :])).sum())

    # pattern alignment (day clusters)
    rows_u = state.day_labels - 1
    has_u = rows_u < patterns.n_day_patterns
    if has_u.any():
        pat = patterns.state_patterns[rows_u[has_u]]  # (t', S)
        logp += params.day_align * int((pat == z[:, has_u].T).sum())

    # series alignment (location clusters); skipped when the patterns were
    # extracted from a record of a different length (frozen refits)
    rows_v = state.loc_labels - 1
    has_v = rows_v < patterns.n_loc_series
    if has_v.any() and patterns.state_series.shape[1] == T:
        ser = patterns.state_series[rows_v[has_v]]  # (s', T)
        logp += params.loc_align * int((ser == z[has_v, :]).sum())

    # data terms
    idx = (z - 1).astype(np.intp)
    a = np.take_along_axis(params.gamma_shape, idx, axis=1)
    b = np.take_along_axis(params.gamma_rate, idx, axis=1)
    xc = np.maximum(rain, RAIN_EPS)
    logp += float((a * np.log(b) + (a - 1.0) * np.log(xc) - b * xc - gammaln(a)).sum())

    # aggregate-rainfall terms
    mu = params.aggregate_mean
    if mu is not None and len(mu):
        y = rain.sum(axis=0)
        has_mu = rows_u < len(mu)
        dev = (y[has_mu] - mu[rows_u[has_mu]]) / params.aggregate_sd
        logp += float(-0.5 * (dev * dev).sum())

    if not math.isfinite(logp):
        raise NumericError("joint log-density is not finite")
    return logp


def patterns_to_rows(patterns: PatternSet):
    """Flatten a pattern set into the two CSV table layouts.

    Returns (spatial_rows, temporal_rows, summary_rows) with columns
    (cluster_id, loc_id, crp_value, cdp_state), (cluster_id, day_index,
    cts_value, cds_state) and (cluster_id, n_days, n_years, aggregate_mm).
    """
    spatial = []
    for u in range(patterns.n_day_patterns):
        for s in range(patterns.rain_patterns.shape[1]):
            spatial.append((u + 1, s, float(patterns.rain_patterns[u, s]),
                            int(patterns.state_patterns[u, s])))
    temporal = []
    for v in range(patterns.n_loc_series):
        for t in range(patterns.rain_series.shape[1]):
            temporal.append((v + 1, t, float(patterns.rain_series[v, t]),
                             int(patterns.state_series[v, t])))
    summary = [(u + 1, int(patterns.day_counts[u]), int(patterns.year_counts[u]),
                float(patterns.pattern_volume[u]))
               for u in range(patterns.n_day_patterns)]
    return spatial, temporal, summary
