import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repulsion.lattice import (LatticeBox, ScalarField, boundary_source, gradient, laplacian, laplacian_field,
                               weighted_norm)


@st.composite
def boxes(draw, max_d=3, max_n=3):
    return LatticeBox(draw(st.integers(1, max_d)), draw(st.integers(0, max_n)))


@given(boxes())
def test_index_roundtrip(box):
    assert box.size == (2 * box.N + 1) ** box.d
    for i, x in enumerate(box.coords):
        assert box.index(x) == i
    assert np.all(box.coords[box.origin] == 0)


@given(boxes())
def test_neighbors_are_unit_steps(box):
    x = box.coords[-1]
    nb = box.neighbors(x)
    assert nb.shape == (2 * box.d, box.d)
    assert np.all(np.abs(nb - x).sum(axis=1) == 1)


def test_invalid_box():
    with pytest.raises(ValueError):
        LatticeBox(0, 1)
    with pytest.raises(ValueError):
        LatticeBox(1, -1)


def test_laplacian_of_affine_field_vanishes_inside():
    box = LatticeBox(2, 3)
    f = ScalarField(box, 2.0 * box.coords[:, 0] - box.coords[:, 1] + 1, boundary=lambda c: 2.0 * c[:, 0] - c[:, 1] + 1)
    np.testing.assert_allclose(laplacian_field(f), 0, atol=1e-12)
    assert abs(laplacian(f, (0, 0))) < 1e-12


def test_laplacian_of_delta_with_zero_exterior():
    box = LatticeBox(1, 2)
    lap = laplacian_field(ScalarField.delta(box))
    np.testing.assert_allclose(lap, [0, 1, -2, 1, 0])


def test_boundary_source_counts_exterior_neighbours():
    box = LatticeBox(2, 1)
    src = boundary_source(box, 1.0)
    assert src[box.index((0, 0))] == 0
    assert src[box.index((1, 1))] == 2
    assert src[box.index((1, 0))] == 1


@given(boxes(max_n=2), st.integers(0, 2**31))
def test_summation_by_parts(box, seed):
    rng = np.random.default_rng(seed)
    f = ScalarField(box, rng.normal(size=box.size))
    g = ScalarField(box, rng.normal(size=box.size))
    lhs = float(f.values @ laplacian_field(g))
    bonds = box.bonds(touching=True, directed=False)
    rhs = -sum(gradient(f, b) * gradient(g, b) for b in bonds)
    assert abs(lhs - rhs) < 1e-9 * (1 + abs(lhs))


def test_gradient_is_antisymmetric():
    box = LatticeBox(1, 2)
    f = ScalarField(box, np.arange(5.0))
    b = np.array([[0], [1]])
    assert gradient(f, b) == -gradient(f, b[::-1]) == -1.0


def test_weighted_norm():
    box = LatticeBox(1, 1)
    one = ScalarField(box, np.ones(3))
    zero = ScalarField.zeros(box)
    r = 0.5
    expected = np.sqrt(1 + 2 * np.exp(-2 * r))
    assert abs(weighted_norm(one, zero, r) - expected) < 1e-14
    with pytest.raises(ValueError):
        weighted_norm(one, zero, 0.0)
