"""Dataset loading, neighbourhoods, weights, discretization, synthesis."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rainpatterns import (HIGH, LOW, ParseError, SyntheticSpec,
                          ValidationError, compute_spatial_weights,
                          discretize_by_mean, generate_synthetic,
                          load_dataset, save_dataset)
from rainpatterns.data import build_neighborhoods, make_dataset


def write_files(tmp_path, coords, rain, years):
    loc = tmp_path / "locations.csv"
    rn = tmp_path / "rainfall.csv"
    with open(loc, "w") as fh:
        fh.write("loc_id,grid_x,grid_y\n")
        for s, (x, y) in enumerate(coords):
            fh.write(f"{s},{x},{y}\n")
    with open(rn, "w") as fh:
        fh.write("loc_id,day_index,year,rain_mm\n")
        for s in range(len(coords)):
            for t in range(len(years)):
                fh.write(f"{s},{t},{years[t]},{rain[s][t]}\n")
    return loc, rn


class TestLoadDataset:
    def test_paper_scale_shape(self, tmp_path):
        # 357 locations x 976 days round-trips with the documented shape
        spec = SyntheticSpec(n_locations=357, n_days=976, n_day_patterns=3,
                             n_loc_groups=6, n_years=8, seed=0)
        data, _ = generate_synthetic(spec)
        loc, rn = tmp_path / "l.csv", tmp_path / "r.csv"
        save_dataset(data, loc, rn)
        loaded = load_dataset(loc, rn)
        assert loaded.n_locations == 357
        assert loaded.n_days == 976
        assert np.array_equal(loaded.rain, data.rain)
        assert np.array_equal(loaded.year_of_day, data.year_of_day)

    def test_single_cell(self, tmp_path):
        loc, rn = write_files(tmp_path, [(5, 9)], [[0.0]], [2000])
        d = load_dataset(loc, rn)
        assert d.n_locations == 1 and d.n_days == 1
        assert len(d.neighborhoods[0]) == 0

    def test_malformed_row_reports_line(self, tmp_path):
        loc, rn = write_files(tmp_path, [(0, 0)], [[1.0, "oops"]], [0, 0])
        with pytest.raises(ParseError, match=r":3:"):
            load_dataset(loc, rn)

    def test_duplicate_coordinate_rejected(self, tmp_path):
        loc, rn = write_files(tmp_path, [(1, 1), (1, 1)],
                              [[1.0], [2.0]], [0])
        with pytest.raises(ValidationError):
            load_dataset(loc, rn)

    def test_negative_rainfall_rejected(self, tmp_path):
        loc, rn = write_files(tmp_path, [(0, 0)], [[-3.0]], [0])
        with pytest.raises(ValidationError, match="negative"):
            load_dataset(loc, rn)

    def test_missing_cell_rejected(self, tmp_path):
        loc = tmp_path / "l.csv"
        rn = tmp_path / "r.csv"
        loc.write_text("loc_id,grid_x,grid_y\n0,0,0\n1,1,0\n")
        rn.write_text("loc_id,day_index,year,rain_mm\n0,0,0,1.0\n")
        with pytest.raises(ValidationError, match="expected 2 cells"):
            load_dataset(loc, rn)

    def test_conflicting_year_rejected(self, tmp_path):
        loc = tmp_path / "l.csv"
        rn = tmp_path / "r.csv"
        loc.write_text("loc_id,grid_x,grid_y\n0,0,0\n1,1,0\n")
        rn.write_text("loc_id,day_index,year,rain_mm\n"
                      "0,0,0,1.0\n1,0,1,1.0\n")
        with pytest.raises(ValidationError, match="conflicting year"):
            load_dataset(loc, rn)

    def test_noncontiguous_years_rejected(self):
        with pytest.raises(ValidationError, match="contiguous"):
            make_dataset(np.ones((1, 3)), np.array([[0, 0]]),
                         np.array([0, 1, 0]))


class TestNeighborhoods:
    def test_three_by_three_lattice(self):
        # oracle: enumerate the eight offsets, clip at the boundary
        coords = [(x, y) for y in range(3) for x in range(3)]
        nbs = build_neighborhoods(np.array(coords))
        index = {c: i for i, c in enumerate(coords)}
        for s, (x, y) in enumerate(coords):
            expect = sorted(index[(x + a, y + b)]
                            for a in (-1, 0, 1) for b in (-1, 0, 1)
                            if (a, b) != (0, 0) and (x + a, y + b) in index)
            assert list(nbs[s]) == expect
        center = index[(1, 1)]
        assert len(nbs[center]) == 8
        for corner in [(0, 0), (2, 0), (0, 2), (2, 2)]:
            assert len(nbs[index[corner]]) == 3

    @given(st.sets(st.tuples(st.integers(-5, 5), st.integers(-5, 5)),
                   min_size=1, max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_symmetry_property(self, coord_set):
        coords = np.array(sorted(coord_set))
        nbs = build_neighborhoods(coords)
        for s, nb in enumerate(nbs):
            assert s not in nb
            assert len(nb) <= 8
            for s2 in nb:
                assert s in nbs[s2]


class TestSpatialWeights:
    def make(self, series):
        # horizontal strip of adjacent locations
        series = np.asarray(series, dtype=float)
        coords = np.array([[i, 0] for i in range(series.shape[0])])
        years = np.zeros(series.shape[1], dtype=int)
        return make_dataset(series, coords, years)

    def test_identical_series(self):
        d = self.make([[1, 2, 3], [1, 2, 3]])
        w = compute_spatial_weights(d)
        assert w.get(0, 1) == pytest.approx(1.0)

    def test_anticorrelated_series(self):
        d = self.make([[1, 2, 3], [5, 4, 3]])
        w = compute_spatial_weights(d)
        assert w.get(0, 1) == pytest.approx(-1.0)

    def test_hand_case(self):
        # oracle: Pearson formula evaluated by hand on (1,2,3) vs (2,2,4)
        x = np.array([1.0, 2, 3])
        y = np.array([2.0, 2, 4])
        xc, yc = x - x.mean(), y - y.mean()
        expect = (xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc))
        assert expect == pytest.approx(math.sqrt(3) / 2)
        d = self.make([x, y])
        w = compute_spatial_weights(d)
        assert w.get(0, 1) == pytest.approx(expect)
        assert w.get(0, 1) == pytest.approx(0.866, abs=1e-3)

    def test_zero_variance_gets_zero(self):
        d = self.make([[2, 2, 2], [1, 5, 3]])
        w = compute_spatial_weights(d)
        assert w.get(0, 1) == 0.0
        assert w.get(1, 0) == 0.0

    def test_symmetric_and_bounded(self, small_synth):
        data, _ = small_synth
        w = compute_spatial_weights(data)
        for s, nb in enumerate(data.neighborhoods):
            for s2 in nb:
                g = w.get(s, int(s2))
                assert -1.0 <= g <= 1.0
                assert g == pytest.approx(w.get(int(s2), s))

    def test_needs_two_days(self):
        d = self.make([[1.0], [2.0]])
        with pytest.raises(ValidationError):
            compute_spatial_weights(d)


class TestDiscretize:
    def make(self, series):
        series = np.asarray(series, dtype=float)
        coords = np.array([[i, 0] for i in range(series.shape[0])])
        return make_dataset(series, coords,
                            np.zeros(series.shape[1], dtype=int))

    def test_constant_zero_is_all_low(self):
        z = discretize_by_mean(self.make([[0, 0, 0]]))
        assert (z == LOW).all()

    def test_two_day_threshold(self):
        z = discretize_by_mean(self.make([[0, 10]]))
        assert list(z[0]) == [LOW, HIGH]

    def test_tie_resolves_low(self):
        # mean of (4, 4, 10) is 6; the 4s sit below, 10 above
        z = discretize_by_mean(self.make([[4, 4, 10]]))
        assert list(z[0]) == [LOW, LOW, HIGH]

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2,
                    max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_nonconstant_row_has_a_high(self, vals):
        arr = np.array(vals)
        if np.ptp(arr) == 0:
            return
        z = discretize_by_mean(self.make([arr]))
        assert (z[0] == HIGH).any()


class TestSynthetic:
    def test_zero_noise_single_pattern(self):
        spec = SyntheticSpec(n_locations=16, n_days=30, n_day_patterns=1,
                             n_loc_groups=3, n_years=3, flip_noise=0.0, seed=1)
        data, truth = generate_synthetic(spec)
        assert (truth.day_labels == 1).all()
        # every day's state vector equals the single planted pattern
        assert (truth.states == truth.states[:, :1]).all()

    def test_seed_determinism(self):
        spec = SyntheticSpec(n_locations=20, n_days=50, n_day_patterns=3,
                             n_loc_groups=4, n_years=5, seed=9)
        d1, t1 = generate_synthetic(spec)
        d2, t2 = generate_synthetic(spec)
        assert np.array_equal(d1.rain, d2.rain)
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.day_labels, t2.day_labels)
        assert np.array_equal(t1.loc_labels, t2.loc_labels)

    def test_flip_rate_near_nominal(self):
        # oracle: count disagreements between states and the planted pattern
        spec = SyntheticSpec(n_locations=64, n_days=300, n_day_patterns=3,
                             n_loc_groups=6, n_years=6, flip_noise=0.1, seed=4)
        data, truth = generate_synthetic(spec)
        clean_spec = SyntheticSpec(**{**spec.__dict__, "flip_noise": 0.0})
        _, clean = generate_synthetic(clean_spec)
        rate = (truth.states != clean.states).mean()
        assert abs(rate - 0.1) <= 0.02

    def test_labels_dense(self):
        spec = SyntheticSpec(n_locations=30, n_days=60, n_day_patterns=4,
                             n_loc_groups=5, n_years=4, seed=2)
        _, truth = generate_synthetic(spec)
        assert sorted(np.unique(truth.day_labels)) == [1, 2, 3, 4]
        assert sorted(np.unique(truth.loc_labels)) == [1, 2, 3, 4, 5]

    def test_invalid_specs(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(flip_noise=0.5).validate()
        with pytest.raises(ValidationError):
            SyntheticSpec(n_day_patterns=0).validate()
        with pytest.raises(ValidationError):
            SyntheticSpec(n_loc_groups=100, n_locations=10).validate()
