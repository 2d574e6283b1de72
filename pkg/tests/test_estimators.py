import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repulsion.dynamics import InitialLaw, SimConfig
from repulsion.estimators import (HeightSeries, bootstrap_indices, estimate_heights, fit_growth, gap_coefficient,
                                  height_ratio, pooled_sites, variance_check)
from repulsion.lattice import LatticeBox


def _series(times, m1, m2, d=3):
    times = np.asarray(times, dtype=float)
    return HeightSeries(times, np.column_stack([m1, m2]), np.full((len(times), 2), 0.01), 10, 1, d)


@given(st.floats(0.01, 5.0), st.integers(2, 3))
def test_fit_recovers_synthetic_slope(a, d):
    t = np.linspace(100, 1000, 10)
    h = np.sqrt(a * np.log(t) ** (2 if d == 2 else 1))
    f = fit_growth(_series(t, h, 2 * h, d), 1)
    assert abs(f.slope - a) <= 1e-10 * max(1, a)


def test_fit_needs_four_points():
    t = np.array([1.0, 50, 100, 400, 1000])
    with pytest.raises(ValueError):
        fit_growth(_series(t, np.ones(5), np.ones(5)), 1)


def test_ratio_of_equal_layers_is_one_and_flags_zero_mean():
    s = _series([10.0, 20.0], [0.5, 0.6], [0.5, 0.6])
    assert height_ratio(s, 20.0).ratio == 1.0
    z = _series([10.0], [0.0], [0.5])
    r = height_ratio(z, 10.0)
    assert r.flagged and r.ratio is None
    with pytest.raises(ValueError):
        height_ratio(s, 30.0)


def test_gap_coefficient_synthetic():
    t = np.array([10.0, 100.0])
    h = np.sqrt(np.log(t))
    _, c, _ = gap_coefficient(_series(t, h, 3 * h))
    np.testing.assert_allclose(c, 2.0)


def test_pooled_sites_respect_margin():
    box = LatticeBox(2, 8)
    idx = pooled_sites(box, 4, margin=4)
    c = box.coords[idx]
    assert np.all(c % 4 == 0) and np.abs(c).max() <= 5
    with pytest.raises(ValueError):
        pooled_sites(box, 20)


def test_zero_horizon_zero_law_gives_zero_means():
    cfg = SimConfig(2, 4, 0.05, 1.0)
    s = estimate_heights(cfg, [0.0], 3, stride=2, check_horizon=False)
    assert not s.mean.any()


def test_horizon_guard():
    cfg = SimConfig(2, 4, 0.05, 16.0)
    with pytest.raises(ValueError):
        estimate_heights(cfg, [16.0], 2)


def test_heights_are_ordered_and_reproducible():
    cfg = SimConfig(2, 8, 1 / 16, 4.0, init=InitialLaw(0.1, 0.1))
    a = estimate_heights(cfg, [1.0, 2.0, 4.0], 6, seed=3, block=1)
    b = estimate_heights(cfg, [1.0, 2.0, 4.0], 6, seed=3, block=1)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.stderr, b.stderr)
    assert np.all(a.mean[:, 1] >= a.mean[:, 0] - 2 * a.stderr[:, 0])
    assert np.all(a.stderr > 0)
    assert list(a.rows())[0][:2] == (1.0, 1)


def test_more_replicas_shrink_the_stderr():
    cfg = SimConfig(1, 4, 0.05, 1.0)
    s1 = estimate_heights(cfg, [1.0], 100, stride=1, margin=1, check_horizon=False, seed=1)
    s4 = estimate_heights(cfg, [1.0], 400, stride=1, margin=1, check_horizon=False, seed=1)
    ratio = s1.stderr[0, 0] / s4.stderr[0, 0]
    assert 1.4 < ratio < 2.9


def test_worker_pool_gives_identical_results(monkeypatch):
    import repulsion.estimators as est
    monkeypatch.setattr(est, "MAX_BATCH_SITES", 40)
    cfg = SimConfig(1, 4, 0.05, 1.0)
    a = est.estimate_heights(cfg, [1.0], 12, stride=1, margin=1, check_horizon=False, seed=2, workers=1)
    b = est.estimate_heights(cfg, [1.0], 12, stride=1, margin=1, check_horizon=False, seed=2, workers=2)
    np.testing.assert_array_equal(a.units, b.units)


def test_bootstrap_indices_deterministic():
    np.testing.assert_array_equal(bootstrap_indices(5, 10, 1), bootstrap_indices(5, 10, 1))


def test_variance_check_zero_time_and_small_run():
    cfg = SimConfig(2, 2, 1 / 16, 1.0)
    rep = variance_check(cfg, [0.0, 1.0], 1000, seed=4)
    assert rep.var[0].tolist() == [0.0, 0.0] and rep.margin[0].tolist() == [0.0, 0.0]
    assert rep.bound[1] > 0 and rep.passed
    with pytest.raises(ValueError):
        variance_check(cfg, [1.0], 10)
