"""Gridded daily rainfall datasets: loading, validation, and synthesis.

Locations live on an integer lattice (the grid need not be a full rectangle);
a location's neighbourhood is the up-to-eight surrounding lattice cells that
are present in the dataset.  Days carry a year label and days of one year are
contiguous.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .model import HIGH, LOW, LatentState

_NEIGHBOR_OFFSETS = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)
                     if (a, b) != (0, 0)]

LOCATIONS_HEADER = ["loc_id", "grid_x", "grid_y"]
RAINFALL_HEADER = ["loc_id", "day_index", "year", "rain_mm"]


@dataclass(frozen=True)
class RainfallDataset:
    """Immutable S x T daily rainfall matrix with grid and calendar metadata.

    Attributes
    ----------
    rain : ndarray, shape (S, T)
        Non-negative rainfall in mm/day; row = location, column = day.
    grid_coords : ndarray, shape (S, 2)
        Integer lattice coordinates, unique per location.
    year_of_day : ndarray, shape (T,)
        Year label of each day; equal labels form contiguous runs.
    neighborhoods : tuple of ndarray
        Per-location sorted indices of lattice neighbours.
    """

    rain: np.ndarray
    grid_coords: np.ndarray
    year_of_day: np.ndarray
    neighborhoods: tuple

    @property
    def n_locations(self) -> int:
        return self.rain.shape[0]

    @property
    def n_days(self) -> int:
        return self.rain.shape[1]

    @property
    def aggregate(self) -> np.ndarray:
        """Total rainfall per day (length T)."""
        return self.rain.sum(axis=0)


@dataclass(frozen=True)
class SpatialWeights:
    """Correlation weights on neighbour pairs, symmetric and in [-1, 1]."""

    values: tuple          # per-location array aligned with neighborhoods
    neighborhoods: tuple

    def get(self, s: int, s2: int) -> float:
        nb = self.neighborhoods[s]
        pos = np.searchsorted(nb, s2)
        if pos >= len(nb) or nb[pos] != s2:
            raise KeyError(f"{s2} is not a neighbour of {s}")
        return float(self.values[s][pos])

    def edge_arrays(self):
        """Unordered neighbour pairs (i < j) and their weights, as arrays."""
        ei, ej, w = [], [], []
        for s, nb in enumerate(self.neighborhoods):
            for k, s2 in enumerate(nb):
                if s < s2:
                    ei.append(s)
                    ej.append(s2)
                    w.append(self.values[s][k])
        return (np.asarray(ei, dtype=np.intp), np.asarray(ej, dtype=np.intp),
                np.asarray(w, dtype=float))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset with planted patterns.

    ``n_day_patterns`` spatial patterns are planted on ``n_loc_groups``
    spatially contiguous location groups; each day draws one pattern, each
    cell takes the pattern's state flipped with probability ``flip_noise``,
    and rainfall is drawn from the per-state Gamma.  The day axis is split
    into ``n_years`` contiguous years.
    """

    n_locations: int = 64
    n_days: int = 400
    n_day_patterns: int = 4
    n_loc_groups: int = 6
    wet_shape: float = 8.0
    wet_rate: float = 0.5
    dry_shape: float = 0.5
    dry_rate: float = 2.0
    flip_noise: float = 0.1
    seed: int = 0
    n_years: int = 8

    def validate(self) -> None:
        if self.n_day_patterns < 1 or self.n_loc_groups < 1:
            raise ValidationError("need at least one planted pattern and group")
        if not 0.0 <= self.flip_noise < 0.5:
            raise ValidationError("flip_noise must lie in [0, 0.5)")
        if self.n_locations < 1 or self.n_days < 1:
            raise ValidationError("grid must be non-empty")
        if self.n_loc_groups > self.n_locations:
            raise ValidationError("more location groups than locations")
        if self.n_days < max(self.n_years, 4 * self.n_day_patterns):
            raise ValidationError("too few days for the requested years/patterns")
        for p in (self.wet_shape, self.wet_rate, self.dry_shape, self.dry_rate):
            if not p > 0:
                raise ValidationError("Gamma parameters must be positive")


def build_neighborhoods(grid_coords: np.ndarray) -> tuple:
    """Index the up-to-eight lattice neighbours of every location."""
    index = {(int(x), int(y)): s for s, (x, y) in enumerate(grid_coords)}
    out = []
    for x, y in grid_coords:
        nb = [index[(int(x) + a, int(y) + b)] for a, b in _NEIGHBOR_OFFSETS
              if (int(x) + a, int(y) + b) in index]
        out.append(np.array(sorted(nb), dtype=np.intp))
    return tuple(out)


def make_dataset(rain: np.ndarray, grid_coords: np.ndarray,
                 year_of_day: np.ndarray) -> RainfallDataset:
    """Validate raw arrays and assemble a locked dataset."""
    rain = np.ascontiguousarray(rain, dtype=float)
    grid_coords = np.ascontiguousarray(grid_coords, dtype=np.int64)
    year_of_day = np.ascontiguousarray(year_of_day, dtype=np.int64)
    if rain.ndim != 2:
        raise ValidationError("rain must be a 2-D (locations x days) matrix")
    S, T = rain.shape
    if S < 1 or T < 1:
        raise ValidationError("dataset must have at least one location and day")
    if grid_coords.shape != (S, 2):
        raise ValidationError("grid_coords must have shape (S, 2)")
    if year_of_day.shape != (T,):
        raise ValidationError("year_of_day must have length T")
    if not np.isfinite(rain).all():
        raise ValidationError("rainfall contains non-finite values")
    if (rain < 0).any():
        s, t = np.argwhere(rain < 0)[0]
        raise ValidationError(f"negative rainfall at location {s}, day {t}")
    coords = {(int(x), int(y)) for x, y in grid_coords}
    if len(coords) != S:
        raise ValidationError("grid coordinates must be unique per location")
    # equal year labels must form contiguous runs
    change = np.flatnonzero(np.diff(year_of_day) != 0)
    starts = year_of_day[np.concatenate(([0], change + 1))]
    if len(np.unique(starts)) != len(starts):
        raise ValidationError("days of one year must be contiguous")
    for arr in (rain, grid_coords, year_of_day):
        arr.flags.writeable = False
    return RainfallDataset(rain, grid_coords, year_of_day,
                           build_neighborhoods(grid_coords))


def _read_rows(path, header: list[str]):
    """Yield (line_number, row) from a CSV after checking its header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if first != header:
            raise ParseError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            yield lineno, row


def load_dataset(locations_file, rain_file) -> RainfallDataset:
    """Load and validate a dataset from the locations and rainfall CSVs.

    Parameters
    ----------
    locations_file : path
        CSV with header ``loc_id,grid_x,grid_y``; loc_id dense from 0.
    rain_file : path
        CSV with header ``loc_id,day_index,year,rain_mm``; one row per
        (location, day) pair, day_index dense from 0.
    """
    coords: dict[int, tuple[int, int]] = {}
    for lineno, row in _read_rows(locations_file, LOCATIONS_HEADER):
        try:
            loc, gx, gy = (int(v) for v in row)
        except ValueError:
            raise ParseError(f"{locations_file}:{lineno}: non-integer field") from None
        if loc in coords:
            raise ValidationError(f"{locations_file}:{lineno}: duplicate loc_id {loc}")
        coords[loc] = (gx, gy)
    S = len(coords)
    if S == 0:
        raise ValidationError(f"{locations_file}: no locations")
    if sorted(coords) != list(range(S)):
        raise ValidationError(f"{locations_file}: loc_id must be dense from 0")
    grid_coords = np.array([coords[s] for s in range(S)], dtype=np.int64)

    cells: dict[tuple[int, int], float] = {}
    day_year: dict[int, int] = {}
    for lineno, row in _read_rows(rain_file, RAINFALL_HEADER):
        try:
            loc, day, year = int(row[0]), int(row[1]), int(row[2])
            mm = float(row[3])
        except ValueError:
            raise ParseError(f"{rain_file}:{lineno}: malformed field") from None
        if not 0 <= loc < S:
            raise ValidationError(f"{rain_file}:{lineno}: unknown loc_id {loc}")
        if mm < 0:
            raise ValidationError(f"{rain_file}:{lineno}: negative rainfall")
        if (loc, day) in cells:
            raise ValidationError(f"{rain_file}:{lineno}: duplicate cell ({loc}, {day})")
        if day_year.setdefault(day, year) != year:
            raise ValidationError(f"{rain_file}:{lineno}: conflicting year for day {day}")
        cells[(loc, day)] = mm
    T = len(day_year)
    if T == 0:
        raise ValidationError(f"{rain_file}: no rainfall rows")
    if sorted(day_year) != list(range(T)):
        raise ValidationError(f"{rain_file}: day_index must be dense from 0")
    if len(cells) != S * T:
        raise ValidationError(f"{rain_file}: expected {S * T} cells, got {len(cells)}")
    rain = np.empty((S, T))
    for (loc, day), mm in cells.items():
        rain[loc, day] = mm
    years = np.array([day_year[t] for t in range(T)], dtype=np.int64)
    return make_dataset(rain, grid_coords, years)


def save_dataset(d: RainfallDataset, locations_file, rain_file) -> None:
    """Write a dataset back out in the load_dataset CSV formats."""
    with open(locations_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOCATIONS_HEADER)
        for s in range(d.n_locations):
            w.writerow([s, int(d.grid_coords[s, 0]), int(d.grid_coords[s, 1])])
    with open(rain_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RAINFALL_HEADER)
        for s in range(d.n_locations):
            for t in range(d.n_days):
                w.writerow([s, t, int(d.year_of_day[t]), repr(float(d.rain[s, t]))])


def compute_spatial_weights(d: RainfallDataset) -> SpatialWeights:
    """Pearson-correlate each location's time series with its neighbours.

    A location whose series has zero variance gets weight 0 on all its pairs:
    no coherence pull in either direction.
    """
    if d.n_days < 2:
        raise ValidationError("correlation weights need at least two days")
    centered = d.rain - d.rain.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    values = []
    for s, nb in enumerate(d.neighborhoods):
        row = np.zeros(len(nb))
        for k, s2 in enumerate(nb):
            denom = norms[s] * norms[s2]
            if denom > 0:
                row[k] = float(np.clip(centered[s] @ centered[s2] / denom, -1.0, 1.0))
        values.append(row)
    return SpatialWeights(tuple(values), d.neighborhoods)


def discretize_by_mean(d: RainfallDataset) -> np.ndarray:
    """Threshold each cell against its location's mean daily rainfall.

    Strictly above the mean is state 1 (high); equal or below is state 2.
    """
    means = d.rain.mean(axis=1, keepdims=True)
    return np.where(d.rain > means, HIGH, LOW).astype(np.int8)


def _lattice_coords(n: int) -> np.ndarray:
    side = math.ceil(math.sqrt(n))
    idx = np.arange(n)
    return np.stack([idx % side, idx // side], axis=1).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec):
    """Generate a planted-pattern dataset plus its ground-truth latent state.

    Deterministic given the seed: the same spec always yields bit-identical
    rainfall, labels, and states.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    S, T, K, L = (spec.n_locations, spec.n_days, spec.n_day_patterns,
                  spec.n_loc_groups)
    coords = _lattice_coords(S)

    # contiguous location groups: nearest of L seed locations
    seeds = rng.choice(S, size=L, replace=False)
    d2 = ((coords[:, None, :] - coords[seeds][None, :, :]) ** 2).sum(axis=2)
    groups = d2.argmin(axis=1)  # 0-based; dense, as each seed owns itself

    # per-pattern group states; patterns must disagree on at least a fifth of
    # the locations pairwise so that planted clusters are recoverable
    group_sizes = np.bincount(groups, minlength=L)
    min_sep = max(0.2 * S, 1.0)
    group_states = np.empty((K, L), dtype=np.int8)
    for k in range(K):
        for _ in range(1000):
            # keep planted wet fractions moderate: mean-thresholding (and so
            # any method starting from it) is uninformative on a grid that is
            # wet nearly every day
            wet_prob = rng.uniform(0.15, 0.55)
            cand = np.where(rng.random(L) < wet_prob, HIGH, LOW).astype(np.int8)
            frac = (group_sizes * (cand == HIGH)).sum() / S
            if not 0.08 <= frac <= 0.6:
                continue
            if all((group_sizes * (cand != group_states[j])).sum() >= min_sep
                   for j in range(k)):
                group_states[k] = cand
                break
        else:
            raise ValidationError("could not plant well-separated patterns; "
                                  "increase n_loc_groups")
    patterns = group_states[:, groups]  # (K, S)

    # per-day pattern labels, resampled until all patterns occur
    while True:
        u_true = rng.integers(1, K + 1, size=T)
        if len(np.unique(u_true)) == K:
            break

    base = patterns[u_true - 1].T  # (S, T)
    flips = rng.random((S, T)) < spec.flip_noise
    z_true = np.where(flips, (HIGH + LOW) - base, base).astype(np.int8)

    shape = np.where(z_true == HIGH, spec.wet_shape, spec.dry_shape)
    scale = np.where(z_true == HIGH, 1.0 / spec.wet_rate, 1.0 / spec.dry_rate)
    rain = rng.gamma(shape, scale)

    # contiguous years of near-equal length
    bounds = np.linspace(0, T, spec.n_years + 1).round().astype(int)
    years = np.zeros(T, dtype=np.int64)
    for yidx in range(spec.n_years):
        years[bounds[yidx]:bounds[yidx + 1]] = yidx

    data = make_dataset(rain, coords, years)
    truth = LatentState(states=z_true, day_labels=u_true.astype(np.int64),
                        loc_labels=(groups + 1).astype(np.int64))
    return data, truth


def write_ground_truth(truth: LatentState, u_file, v_file, z_file) -> None:
    """Write the synthetic ground truth in the three CSV layouts."""
    with open(u_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day_index", "u_true"])
        for t, u in enumerate(truth.day_labels):
            w.writerow([t, int(u)])
    with open(v_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loc_id", "v_true"])
        for s, v in enumerate(truth.loc_labels):
            w.writerow([s, int(v)])
    with open(z_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loc_id", "day_index", "z_true"])
        S, T = truth.states.shape
        for s in range(S):
            for t in range(T):
                w.writerow([s, t, int(truth.states[s, t])])
