import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repulsion.heatkernel import (DirichletKernel, HeatKernel, c2_constant, dirichlet_matrix, extrapolate_log_rate,
                                  green_constant, heat_integral, kernel_1d, kernel_infinite, log_d,
                                  log_rate_2d, return_probability, truncation_radius, variance_bound)
from repulsion.lattice import LatticeBox

from oracles import watson_g3


@given(st.floats(0.0, 50.0), st.integers(1, 3))
def test_kernel_is_stochastic(t, d):
    R = truncation_radius(t)
    mass = HeatKernel(d, t).profile(R).sum()
    assert abs(mass - 1) <= 1e-10


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.integers(-5, 5))
def test_chapman_kolmogorov(s, t, k):
    R = truncation_radius(s + t)
    z = np.arange(-R, R + 1)
    lhs = float(kernel_1d(s + t, k))
    rhs = float(np.sum(kernel_1d(s, z) * kernel_1d(t, k - z)))
    assert abs(lhs - rhs) <= 1e-8


def test_kernel_generator_is_twice_the_laplacian():
    h = 1e-6
    d = 2
    p0 = (kernel_infinite(d, h, (0, 0), (0, 0)) - 1) / h
    p1 = kernel_infinite(d, h, (0, 0), (1, 0)) / h
    assert p0 == pytest.approx(-4 * d, rel=1e-4)
    assert p1 == pytest.approx(2, rel=1e-4)


def test_kernel_symmetry_and_zero_time():
    assert kernel_infinite(2, 0.0, (0, 0), (0, 0)) == 1
    assert kernel_infinite(2, 0.0, (0, 0), (1, 0)) == 0
    assert kernel_infinite(3, 1.3, (1, 2, 3), (0, 0, 0)) == kernel_infinite(3, 1.3, (0, 0, 0), (1, 2, 3))
    with pytest.raises(ValueError):
        kernel_infinite(2, -1.0, (0, 0), (0, 0))


def test_dirichlet_kernel_is_sub_stochastic_and_dominated():
    box = LatticeBox(2, 3)
    P = dirichlet_matrix(box, 2.0)
    assert np.all(P >= -1e-15) and np.all(P.sum(axis=1) <= 1 + 1e-12)
    for i in (0, box.origin, box.size - 1):
        x = box.coords[i]
        for j in range(0, box.size, 7):
            assert P[i, j] <= kernel_infinite(2, 2.0, x, box.coords[j]) + 1e-15
    np.testing.assert_allclose(dirichlet_matrix(box, 1.0) @ dirichlet_matrix(box, 1.0), P, atol=1e-12)
    assert DirichletKernel(box, 2.0)((0, 0), (1, 0)) == pytest.approx(P[box.origin, box.index((1, 0))])


def test_dirichlet_kernel_approaches_infinite_kernel_in_large_boxes():
    box = LatticeBox(1, 40)
    assert DirichletKernel(box, 1.0)((0,), (2,)) == pytest.approx(kernel_infinite(1, 1.0, (0,), (2,)), rel=1e-12)


def test_green_constant_d3_against_watson_integral():
    g = watson_g3()
    assert g == pytest.approx(1.5163860592, abs=1e-10)
    assert abs(green_constant(3) - g / 12) <= 1e-8


def test_green_constant_decreases_with_dimension():
    c = [green_constant(d) for d in (3, 4, 5)]
    assert c[0] > c[1] > c[2] > 0
    with pytest.raises(ValueError):
        green_constant(2)


def test_heat_integral_matches_direct_quadrature():
    val = float(mpmath.quad(lambda s: (mpmath.besseli(0, 4 * s) * mpmath.exp(-4 * s)) ** 3, [0, 1, 10]))
    assert heat_integral(10.0, 3) == pytest.approx(val, rel=1e-10)


def test_log_rate_2d_extrapolation():
    assert extrapolate_log_rate() == pytest.approx(log_rate_2d(), rel=0.02)
    assert log_rate_2d() == pytest.approx(1 / (8 * math.pi))


def test_c2_and_variance_bound():
    assert c2_constant(3) == pytest.approx((math.sqrt(2) + 1) ** 2 * green_constant(3))
    assert c2_constant(3) / 2 == pytest.approx(0.368256, abs=1e-6)
    assert variance_bound(0.0, 3) == 0
    b = [variance_bound(t, 3) for t in (1, 10, 100)]
    assert b[0] < b[1] < b[2] < 2 * green_constant(3)


def test_return_probability_and_log_d():
    assert return_probability(0.0, 2) == 1
    assert log_d(math.e, 2) == pytest.approx(1) and log_d(math.e**2, 3) == pytest.approx(2)
    with pytest.raises(ValueError):
        log_d(10.0, 1)
