"""Evaluation metrics for one clustering run: prominence, fit, coherence.

All distance-style metrics are reported as per-day means and are invariant
under cluster relabelling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .model import HIGH, RAIN_EPS, PatternSet


class DistanceReport(NamedTuple):
    mean_l2: float
    mean_hamming: float
    mean_agg: float
    n_days_scored: int


def prominent_clusters(day_labels: np.ndarray, years: np.ndarray,
                       min_years: int = 5) -> set[int]:
    """Labels whose member days span at least ``min_years`` distinct years."""
    out = set()
    for u in np.unique(day_labels):
        if len(np.unique(years[day_labels == u])) >= min_years:
            out.add(int(u))
    return out


def distance_report(rain: np.ndarray, states: np.ndarray,
                    day_labels: np.ndarray, patterns: PatternSet) -> DistanceReport:
    """Mean distances between daily vectors and their cluster's patterns.

    Reports the mean Euclidean distance of each day's rainfall vector to its
    rain pattern, the mean Hamming distance of its state vector to its state
    pattern, and the mean absolute error of its total rainfall against the
    pattern volume.  Days whose label has no pattern row (refit overflow) are
    skipped.
    """
    rows = day_labels - 1
    ok = rows < patterns.n_day_patterns
    n = int(ok.sum())
    if n == 0:
        return DistanceReport(math.nan, math.nan, math.nan, 0)
    r = rows[ok]
    diff = rain[:, ok].T - patterns.rain_patterns[r]
    l2 = float(np.sqrt((diff * diff).sum(axis=1)).sum() / n)
    ham = float((states[:, ok].T != patterns.state_patterns[r]).sum() / n)
    y = rain[:, ok].sum(axis=0)
    agg = float(np.abs(y - patterns.pattern_volume[r]).sum() / n)
    return DistanceReport(l2, ham, agg, n)


def cluster_homogeneity(y: np.ndarray, day_labels: np.ndarray):
    """Per-cluster population std of total rainfall and the day-weighted mean.

    Returns (per_cluster_std, pooled_std) with one entry per label 1..K.
    """
    K = int(day_labels.max())
    stds = np.empty(K)
    counts = np.empty(K)
    for u in range(1, K + 1):
        vals = y[day_labels == u]
        stds[u - 1] = float(vals.std())  # population convention
        counts[u - 1] = len(vals)
    pooled = float((stds * counts).sum() / counts.sum())
    return stds, pooled


def spatial_coherence(patterns: PatternSet, neighborhoods) -> tuple[float, float]:
    """Mean neighbour disagreement of the state and rain patterns.

    Both scores are normalised by the total number of (pattern, directed
    neighbour pair) terms, so a constant pattern scores 0 and i.i.d. random
    binary patterns score about 0.5.  Rain-pattern terms whose reference value
    is below the rainfall floor are skipped (counted as zero).
    """
    ei, ej = [], []
    for s, nb in enumerate(neighborhoods):
        for s2 in nb:
            ei.append(s)
            ej.append(int(s2))
    if not ei:
        return 0.0, 0.0
    ei = np.asarray(ei, dtype=np.intp)
    ej = np.asarray(ej, dtype=np.intp)
    K = patterns.n_day_patterns
    total = K * len(ei)

    cdp = patterns.state_patterns
    spch_state = float((cdp[:, ej] != cdp[:, ei]).sum() / total)

    crp = patterns.rain_patterns
    ref = np.abs(crp[:, ei])
    okay = ref >= RAIN_EPS
    rel = np.zeros_like(ref)
    rel[okay] = np.abs(crp[:, ej] - crp[:, ei])[okay] / ref[okay]
    spch_rain = float(rel.sum() / total)
    return spch_state, spch_rain


def spell_stats(day_labels: np.ndarray, years: np.ndarray):
    """Spell counts and lengths per cluster.

    A spell is a maximal run of one label within a single year; year
    boundaries break runs.  Returns (spells_per_year, mean_length) arrays
    indexed by label - 1, with spells_per_year normalised by the number of
    distinct years in the record.
    """
    K = int(day_labels.max())
    n_years = len(np.unique(years))
    runs = np.zeros(K)
    days = np.zeros(K)
    t = 0
    T = len(day_labels)
    while t < T:
        u, yy = day_labels[t], years[t]
        start = t
        while t < T and day_labels[t] == u and years[t] == yy:
            t += 1
        runs[u - 1] += 1
        days[u - 1] += t - start
    mean_len = np.divide(days, runs, out=np.zeros(K), where=runs > 0)
    return runs / n_years, mean_len


def wet_fraction(patterns: PatternSet) -> np.ndarray:
    """Fraction of locations in the high state, per state pattern."""
    return (patterns.state_patterns == HIGH).mean(axis=1)


def aic(n_clusters: int, mean_distance: float, kind: str,
        align_strength: float = 1.0) -> float:
    """Akaike information criterion, 2k - 2 log(likelihood).

    The ``gaussian`` kind treats the mean Euclidean distance as the negative
    log-likelihood; the ``hamming`` kind weights the mean Hamming distance by
    the alignment strength.
    """
    if kind == "gaussian":
        return 2.0 * n_clusters + 2.0 * mean_distance
    if kind == "hamming":
        return 2.0 * n_clusters + 2.0 * align_strength * mean_distance
    raise ValidationError(f"unknown AIC kind {kind!r}")


def adjusted_rand_index(a: np.ndarray, b: np.ndarray) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError("labelings must have equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    table = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    n = comb2(len(a))
    expected = sum_a * sum_b / n if n > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class MetricsReport:
    """Per-cluster and global evaluation quantities for one method run."""

    method: str
    n_clusters: int
    per_cluster: dict[str, np.ndarray] = field(default_factory=dict)
    global_values: dict[str, float] = field(default_factory=dict)

    def to_rows(self):
        rows = [(k, "", v) for k, v in sorted(self.global_values.items())]
        for name in sorted(self.per_cluster):
            arr = self.per_cluster[name]
            rows.extend((name, u + 1, float(arr[u])) for u in range(len(arr)))
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "cluster_id", "value"])
            for name, cid, val in self.to_rows():
                w.writerow([name, cid, repr(float(val))])

    def format_table(self) -> str:
        lines = [f"method: {self.method}", "", "global:"]
        for k, v in sorted(self.global_values.items()):
            lines.append(f"  {k:<22} {v:.6g}")
        if self.per_cluster:
            names = sorted(self.per_cluster)
            lines.append("")
            lines.append("  ".join(["cluster"] + [f"{n:>18}" for n in names]))
            for u in range(self.n_clusters):
                cells = [f"{self.per_cluster[n][u]:>18.6g}" for n in names]
                lines.append("  ".join([f"{u + 1:>7}"] + cells))
        return "\n".join(lines) + "\n"


def read_metrics_csv(path):
    """Load a metrics CSV back into (global_values, per_cluster) dicts."""
    global_values: dict[str, float] = {}
    per_cluster: dict[str, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["metric", "cluster_id", "value"]:
            raise ValidationError(f"{path}: not a metrics CSV")
        for name, cid, val in reader:
            if cid == "":
                global_values[name] = float(val)
            else:
                per_cluster.setdefault(name, {})[int(cid)] = float(val)
    return global_values, per_cluster


def build_report(data, states: np.ndarray, day_labels: np.ndarray,
                 patterns: PatternSet, method: str,
                 min_years: int = 5) -> MetricsReport:
    """Assemble the full evaluation report for one run.

    AIC values use a unit alignment strength for every method so that the
    numbers are comparable across methods.
    """
    y = data.rain.sum(axis=0)
    years = data.year_of_day
    K = patterns.n_day_patterns

    prominent = prominent_clusters(day_labels, years, min_years)
    dist = distance_report(data.rain, states, day_labels, patterns)
    stds, pooled = cluster_homogeneity(y, day_labels)
    spch_state, spch_rain = spatial_coherence(patterns, data.neighborhoods)
    spells, spell_len = spell_stats(day_labels, years)
    wet = wet_fraction(patterns)

    mean_y = np.zeros(K)
    for u in range(1, K + 1):
        sel = day_labels == u
        if sel.any():
            mean_y[u - 1] = float(y[sel].mean())

    in_prominent = np.isin(day_labels, sorted(prominent))
    coverage = int(in_prominent.sum())
    n_pc = len(prominent)

    kmax = min(K, len(stds))
    report = MetricsReport(method=method, n_clusters=K)
    report.per_cluster = {
        "n_days": patterns.day_counts.astype(float),
        "n_years": patterns.year_counts.astype(float),
        "prominent": np.array([1.0 if u + 1 in prominent else 0.0
                               for u in range(K)]),
        "mean_y": mean_y,
        "std_y": np.pad(stds[:kmax], (0, K - kmax)),
        "wet_fraction": wet,
        "spells_per_year": np.pad(spells[:kmax], (0, K - kmax)),
        "mean_spell_length": np.pad(spell_len[:kmax], (0, K - kmax)),
        "aggregate_mm": patterns.pattern_volume,
    }
    report.global_values = {
        "n_clusters": float(K),
        "n_prominent": float(n_pc),
        "pc_coverage": float(coverage),
        "avg_days_per_pc": coverage / n_pc if n_pc else 0.0,
        "mean_l2": dist.mean_l2,
        "mean_hamming": dist.mean_hamming,
        "mean_agg": dist.mean_agg,
        "pooled_std_y": pooled,
        "spch_cdp": spch_state,
        "spch_crp": spch_rain,
        "aic_gaussian": aic(K, dist.mean_l2, "gaussian"),
        "aic_hamming": aic(K, dist.mean_hamming, "hamming"),
    }
    return report
