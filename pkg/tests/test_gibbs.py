import math

import numpy as np
import pytest
from scipy import integrate

from repulsion.dynamics import SimConfig
from repulsion.gibbs import SmallGibbs, ks_distance, reflected_site_cdf, stationarity_test, stationary_density
from repulsion.penalty import PenaltyParams

ORIGIN = np.zeros((1, 1), dtype=np.int64)


def test_single_site_normalizer():
    g = stationary_density(ORIGIN)
    assert g.normalizer == pytest.approx(math.pi / 8, rel=1e-10)


def test_density_support_and_positivity():
    g = stationary_density(ORIGIN)
    pts = np.array([[0.5], [-0.1], [0.5]])
    up = np.array([[1.0], [1.0], [0.2]])
    dens = g.density(pts, up)
    assert dens[0] > 0 and dens[1] == 0 and dens[2] == 0


def test_marginals_match_closed_forms():
    g = stationary_density(ORIGIN)
    x = np.linspace(0, 3, 31)
    for which in ("phi1", "phi2"):
        np.testing.assert_allclose(g.marginal_cdf(which)(x), reflected_site_cdf(which, 1)(x), atol=1e-10)


def test_moments_are_ordered_and_match_direct_integration():
    g = stationary_density(ORIGIN)
    m = g.moments()
    z = math.pi / 8
    eu = integrate.dblquad(lambda v, u: u * math.exp(-(u * u + v * v)), 0, 10, lambda u: u, lambda u: 10)[0] / z
    assert m["phi1"][0] == pytest.approx(eu, rel=1e-8)
    assert m["phi2"][0] >= m["phi1"][0]


def test_two_site_oracle_normalizes():
    sites = np.array([[0], [1]])
    g = stationary_density(sites)
    assert g.expectation(lambda p1, p2: np.ones(len(p1))) == pytest.approx(1.0, rel=1e-8)
    assert g.normalizer > 0


def test_larger_boxes_are_rejected():
    with pytest.raises(ValueError):
        SmallGibbs(np.array([[0], [1], [2]]))


def test_penalized_oracle_converges_to_reflected():
    ref = stationary_density(ORIGIN).moments()["phi1"][0]
    errs = [abs(stationary_density(ORIGIN, "penalized", PenaltyParams(2.0**-k, 2.0**-k)).moments()["phi1"][0] - ref)
            for k in (2, 4, 6)]
    assert errs[0] > errs[1] > errs[2]


def test_rejection_sampler_matches_quadrature_moments():
    g = stationary_density(ORIGIN)
    s1, s2 = g.sample(200000, np.random.default_rng(1))
    m = g.moments()
    for x, key in ((s1[:, 0], "phi1"), (s2[:, 0], "phi2")):
        mean, var = m[key]
        assert abs(x.mean() - mean) < 4 * math.sqrt(var / len(x))
    assert np.all(s1 >= 0) and np.all(s2 >= s1)


def test_ks_distance_of_exact_samples_is_small():
    g = stationary_density(ORIGIN)
    s1, _ = g.sample(50000, np.random.default_rng(2))
    assert ks_distance(s1[:, 0], g.marginal_cdf("phi1")) < 1.63 / math.sqrt(50000) * 1.5


def test_stationarity_short_run_and_flagging():
    cfg = SimConfig(1, 0, 1e-3, 1.0, scheme="fold")
    rep = stationarity_test(cfg, burn_in=50, samples=20000, seed=3, tolerance=0.02)
    assert rep.passed and rep.max_ks < 0.02
    small = stationarity_test(cfg, burn_in=5, samples=100, seed=3)
    assert small.flagged and not small.passed
    with pytest.raises(ValueError):
        stationarity_test(SimConfig(1, 1, 1e-3, 1.0), samples=10)
