import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from morreylab.grid import Grid, GridFunction, Region, multiindices_of_length
from morreylab.symbol import (
    CoefficientField,
    apply_operator,
    char_det,
    cofactor_matrix,
    cofactor_residual,
    det,
    ellipticity_constant,
    lame,
    laplacian,
    monomial,
    polyharmonic,
    second_order,
    sphere_points,
    symbol_at,
    verify_cofactor_identity,
    wave,
)


def test_monomial_empty_product():
    assert monomial(np.array([0.0, 3.0]), (0, 0)) == 1.0
    assert monomial(np.array([2.0, 3.0]), (2, 1)) == 12.0


def test_scalar_cofactor_is_one():
    assert_allclose(cofactor_matrix(np.array([[5.0]])), [[1.0]])


@pytest.mark.parametrize("b", [1, 2, 3])
@pytest.mark.parametrize("n", [2, 3])
def test_polyharmonic_symbol_is_power_of_norm(n, b):
    xi = np.random.default_rng(1).normal(size=(20, n))
    S = symbol_at(polyharmonic(n, b), None, xi)[..., 0, 0]
    assert_allclose(S, np.sum(xi ** 2, axis=1) ** b, rtol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_lame_determinant_closed_form(n):
    mu, lam = 1.3, 0.7
    xi = np.random.default_rng(2).normal(size=(30, n))
    d = char_det(lame(n, mu, lam), None, xi)
    r2 = np.sum(xi ** 2, axis=1)
    assert_allclose(d, mu ** (n - 1) * (lam + 2 * mu) * r2 ** n, rtol=1e-12)


def test_det_matches_numpy_for_all_sizes():
    rng = np.random.default_rng(3)
    for m in range(1, 6):
        S = rng.normal(size=(7, m, m))
        assert_allclose(det(S), np.linalg.det(S), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_cofactor_identity_random_symbols(m):
    rng = np.random.default_rng(m)
    for _ in range(25):
        n, b = int(rng.integers(2, 4)), int(rng.integers(1, 3))
        entries = {a: rng.normal(size=(m, m)) for a in multiindices_of_length(n, 2 * b)}
        A = CoefficientField(n, m, b, entries)
        assert verify_cofactor_identity(A, None, rng.normal(size=n)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_cofactor_times_matrix_is_det(m, seed):
    S = np.random.default_rng(seed).normal(size=(m, m))
    assert cofactor_residual(S) <= 1e-10


def test_sphere_points_unit_norm():
    for n in (2, 3, 4):
        pts = sphere_points(n, 64)
        assert_allclose(np.linalg.norm(pts, axis=1), 1.0, rtol=1e-12)
    with pytest.raises(ValueError):
        sphere_points(3, 4)


@pytest.mark.parametrize("n,b", [(2, 1), (3, 1), (3, 2), (4, 1), (2, 3)])
def test_ellipticity_of_polyharmonic_is_one(n, b):
    rep = ellipticity_constant(polyharmonic(n, b), sphere_samples=256)
    assert rep.elliptic
    assert rep.delta == pytest.approx(1.0, abs=1e-3)


def test_wave_is_not_elliptic():
    rep = ellipticity_constant(wave(3))
    assert not rep.elliptic
    assert rep.delta < 0


def test_variable_coefficient_ellipticity_witness():
    g = Grid(0.25, Region.cube(2))
    a = GridFunction(g, 1.0 + 0.5 * g.points[..., 0])
    rep = ellipticity_constant(laplacian(2).scaled(a))
    assert rep.delta == pytest.approx(0.5, rel=1e-12)
    assert rep.witness_x[0] == -1.0


def test_coefficient_validation():
    with pytest.raises(ValueError):
        CoefficientField(2, 1, 1, {(1, 0): np.eye(1)})
    with pytest.raises(ValueError):
        CoefficientField(2, 2, 1, {(2, 0): np.eye(1)})
    with pytest.raises(ValueError):
        second_order([[1.0, 2.0], [0.0, 1.0]])


@pytest.fixture
def grid3():
    return Grid(0.1, Region.cube(3))


def test_laplacian_of_x1_squared(grid3):
    x = grid3.points
    u = GridFunction(grid3, x[..., 0] ** 2)
    Lu = apply_operator(laplacian(3), u)
    assert_allclose(Lu.values[Lu.mask], 2.0, rtol=1e-10)


def test_laplacian_of_harmonic_is_zero(grid3):
    x = grid3.points
    u = GridFunction(grid3, x[..., 0] ** 2 - x[..., 1] ** 2 + x[..., 0] * x[..., 2])
    Lu = apply_operator(laplacian(3), u)
    assert np.abs(Lu.values[Lu.mask]).max() <= 1e-10


def test_bilaplacian_of_quartic():
    g = Grid(0.1, Region.cube(3))
    r2 = np.sum(g.points ** 2, axis=-1)
    Lu = apply_operator(polyharmonic(3, 2), GridFunction(g, r2 ** 2))
    assert_allclose(Lu.values[Lu.mask], 120.0, rtol=1e-8)


def test_second_order_matches_quadratic_form():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = Grid(0.1, Region.cube(2))
    x = g.points
    u = GridFunction(g, x[..., 0] * x[..., 1])
    Lu = apply_operator(second_order(Q), u)
    assert_allclose(Lu.values[Lu.mask], 2 * Q[0, 1], rtol=1e-10)


def test_lame_on_linear_field_vanishes():
    g = Grid(0.2, Region.cube(2))
    x = g.points
    u = GridFunction(g, np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1]], axis=-1))
    Lu = apply_operator(lame(2, 1.0, 1.0), u)
    # mu Delta u + (lam + mu) grad div u with div u = 3 x1
    assert_allclose(Lu.values[Lu.mask][:, 0], 2.0 + 2.0 * 3.0, rtol=1e-10)
    assert_allclose(Lu.values[Lu.mask][:, 1], 0.0, atol=1e-10)


def test_component_mismatch():
    g = Grid(0.25, Region.cube(2))
    with pytest.raises(ValueError):
        apply_operator(lame(2), GridFunction(g, np.zeros(g.shape)))
