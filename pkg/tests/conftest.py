import numpy as np
import pytest

from rainpatterns import (ModelParams, SyntheticSpec, compute_spatial_weights,
                          generate_synthetic)
from rainpatterns.data import make_dataset


@pytest.fixture(scope="session")
def small_synth():
    """Small planted-pattern dataset shared by read-only tests."""
    spec = SyntheticSpec(n_locations=25, n_days=80, n_day_patterns=2,
                         n_loc_groups=3, n_years=4, flip_noise=0.05, seed=42)
    data, truth = generate_synthetic(spec)
    return data, truth


@pytest.fixture(scope="session")
def small_weights(small_synth):
    data, _ = small_synth
    return compute_spatial_weights(data)


@pytest.fixture()
def tiny_data():
    """Hand-built 2x2 grid, 3-day dataset."""
    rng = np.random.default_rng(7)
    coords = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    rain = rng.gamma(2.0, 4.0, (4, 3))
    return make_dataset(rain, coords, np.array([0, 0, 1]))


def fitted_params(data, state, **kw):
    """ModelParams with Gamma/aggregate estimates for the given state."""
    from rainpatterns import update_params_ml

    shape, rate, mu = update_params_ml(data, state)
    base = dict(day_align=3.0, loc_align=1.5, temporal_factor=2.0,
                aggregate_sd=max(float(data.aggregate.std()), 1.0))
    base.update(kw)
    return ModelParams(gamma_shape=shape, gamma_rate=rate, aggregate_mean=mu,
                       **base)
