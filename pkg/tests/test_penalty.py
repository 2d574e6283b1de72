import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from repulsion.penalty import (BUMP_M2, BUMP_MASS, MollifiedPenalty, PenaltyParams, bump, chi, chi_prime,
                               chi_smoothed, chi_smoothed_prime, grad_w_eps, grad_w_eps_delta, unit_T, w_eps,
                               w_eps_delta)

floats = st.floats(-5, 5, allow_nan=False)
scales = st.floats(1e-3, 1.0)


def test_bump_normalization():
    assert abs(integrate.quad(lambda z: bump(z), -1, 1, epsabs=0, epsrel=1e-12)[0] - 1) < 1e-11
    assert bump(1.0) == 0 and bump(-1.5) == 0
    assert 0 < BUMP_MASS < 1 and 0 < BUMP_M2 < 1


@given(floats, scales)
def test_chi_closed_form(u, a):
    assert chi(a, u) == pytest.approx(min(u, 0) ** 2 / (2 * a), abs=1e-15)
    assert chi_prime(a, u) == pytest.approx(min(u, 0) / a, abs=1e-15)


@given(st.floats(-0.5, 0.5), scales, st.floats(1e-3, 0.1))
def test_smoothed_derivative_matches_quadrature(u, a, d):
    tab = MollifiedPenalty(a, d)
    assert tab.derivative(u) == pytest.approx(chi_smoothed_prime(a, d, u), rel=1e-12, abs=1e-13 / a)


def test_smoothed_derivative_monotone_nonpositive():
    s = np.linspace(-3, 1, 200001)
    t = MollifiedPenalty(1.0, 1.0).derivative(s)
    assert np.all(t <= 0)
    assert np.all(np.diff(t) >= 0)
    np.testing.assert_array_equal(t[s >= 0], 0)


def test_smoothed_is_exact_outside_the_kink():
    a, d = 0.3, 0.01
    u = np.array([-1.0, -0.05, -0.021])
    np.testing.assert_allclose(chi_smoothed_prime(a, d, u), (u + d) / a, rtol=1e-13)
    assert chi_smoothed_prime(a, d, 0.5) == 0


def test_smoothed_converges_to_sharp_penalty():
    u = np.linspace(-1, 1, 41)
    errs = [np.max(np.abs(chi_smoothed(0.5, d, u) - chi(0.5, u))) for d in (0.1, 0.01, 0.001)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-2


def test_unit_T_continuity_at_breakpoints():
    assert abs(unit_T(-2.0) - (-1.0)) < 1e-13
    assert abs(unit_T(0.0)) < 1e-13


@given(floats, floats, scales, scales)
def test_pair_gradient_finite_difference(u, v, e1, e2):
    eps = PenaltyParams(e1, e2)
    h = 1e-6
    gu, gv = grad_w_eps(eps, u, v)
    fu = (w_eps(eps, u + h, v) - w_eps(eps, u - h, v)) / (2 * h)
    fv = (w_eps(eps, u, v + h) - w_eps(eps, u, v - h)) / (2 * h)
    # central differences are exact on quadratic pieces; the kink costs O(h / eps)
    tol = 2 * h / min(e1, e2) + 1e-6 * (1 + abs(fu) + abs(fv))
    assert gu == pytest.approx(fu, abs=tol)
    assert gv == pytest.approx(fv, abs=tol)


@given(floats, floats)
def test_pair_gradient_sum_is_wall_term(u, v):
    p = PenaltyParams(0.2, 0.05, 0.01)
    gu, gv = grad_w_eps_delta(p, u, v)
    assert gu + gv == pytest.approx(float(chi_smoothed_prime(0.2, 0.01, u)), abs=1e-12)
    assert w_eps_delta(p, u, v) >= 0


def test_params_validation():
    with pytest.raises(ValueError):
        PenaltyParams(0.0, 1.0)
    with pytest.raises(ValueError):
        PenaltyParams(1.0, 1.0, -0.1)
