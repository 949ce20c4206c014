import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate

from morreylab.catalog import sample
from morreylab.grid import Grid, GridFunction, Region, finite_difference, multiindices_of_length
from morreylab.kernels import (
    LogFamilyError,
    UnsupportedKernel,
    commutator,
    cube_pv_constant,
    cz_checks,
    frozen_scale,
    fundamental_matrix,
    fundamental_solution,
    homogeneity_residual,
    kernel_derivative,
    lattice_pv_constant,
    newtonian_potential,
    representation_check,
    representation_terms,
    self_cell_integral,
    singular_operator,
    sphere_area,
    sphere_quadrature,
    surface_term,
)
from morreylab.spaces import lp_norm
from morreylab.symbol import apply_operator, lame, laplacian, polyharmonic, second_order

RNG = np.random.default_rng(11)
PTS3 = RNG.normal(size=(40, 3))
PTS5 = RNG.normal(size=(40, 5))


# --------------------------------------------------------------------------
# sphere quadrature
# --------------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_sphere_weights_sum_to_area(n):
    pts, w = sphere_quadrature(n, 12)
    assert w.sum() == pytest.approx(sphere_area(n), rel=1e-12)
    assert_allclose(np.linalg.norm(pts, axis=1), 1.0, rtol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sphere_second_moment(n):
    pts, w = sphere_quadrature(n, 16)
    # int y_1^2 = |S| / n, int y_1^4 = 3 |S| / (n (n + 2))
    assert np.dot(w, pts[:, 0] ** 2) == pytest.approx(sphere_area(n) / n, rel=1e-12)
    assert np.dot(w, pts[:, 0] ** 4) == pytest.approx(3 * sphere_area(n) / (n * (n + 2)), rel=1e-12)


# --------------------------------------------------------------------------
# closed forms against a symbolic oracle
# --------------------------------------------------------------------------

X = sp.symbols("x1:4", real=True)
R3 = sp.sqrt(sum(v ** 2 for v in X))


def sympy_field(expr, alpha):
    d = expr
    for i, a in enumerate(alpha):
        if a:
            d = sp.diff(d, X[i], a)
    return sp.lambdify(X, d, "numpy")


def test_laplace_three_closed_form():
    K = fundamental_solution("laplace", 3)
    r = np.linalg.norm(PTS3, axis=1)
    assert_allclose(K(PTS3), -1 / (4 * np.pi * r), rtol=1e-13)


def test_laplace_first_derivative_example():
    K = fundamental_solution("laplace", 3)
    r = np.linalg.norm(PTS3, axis=1)
    assert_allclose(K.derivative((1, 0, 0))(PTS3), PTS3[:, 0] / (4 * np.pi * r ** 3), rtol=1e-12)


def test_laplace_second_derivative_sign():
    K = fundamental_solution("laplace", 3)
    r = np.linalg.norm(PTS3, axis=1)
    want = (r ** 2 - 3 * PTS3[:, 0] ** 2) / (4 * np.pi * r ** 5)
    assert_allclose(K.derivative((2, 0, 0))(PTS3), want, rtol=1e-11, atol=1e-14)


def test_biharmonic_three_closed_form():
    K = fundamental_solution("polyharmonic", 3, b=2)
    r = np.linalg.norm(PTS3, axis=1)
    assert_allclose(K(PTS3), -r / (8 * np.pi), rtol=1e-13)
    lap = sum(K.derivative(tuple(2 * (j == i) for j in range(3)))(PTS3) for i in range(3))
    assert_allclose(lap, fundamental_solution("laplace", 3)(PTS3), rtol=1e-12)


@pytest.mark.parametrize(
    "family,b,expr",
    [
        ("laplace", 1, -1 / (4 * sp.pi * R3)),
        ("polyharmonic", 2, -R3 / (8 * sp.pi)),
        ("polyharmonic", 3, -(R3 ** 3) / (96 * sp.pi)),
    ],
)
def test_derivatives_match_sympy(family, b, expr):
    K = fundamental_solution(family, 3, b=b)
    for k in range(0, 2 * b + 1):
        for alpha in multiindices_of_length(3, k):
            oracle = sympy_field(expr, alpha)(*PTS3.T)
            assert_allclose(K.derivative(alpha)(PTS3), oracle, rtol=1e-9, atol=1e-12)


def test_polyharmonic_inverts_iterated_laplacian():
    """Delta^b Gamma_b = 0 away from the origin and Delta Gamma_b = Gamma_{b-1}."""
    for b in (2, 3):
        Kb = fundamental_solution("polyharmonic", 5, b=b)
        Kprev = fundamental_solution("polyharmonic" if b > 2 else "laplace", 5, b=b - 1)
        pts = RNG.normal(size=(20, 5))
        lap = sum(Kb.derivative(tuple(2 * (j == i) for j in range(5)))(pts) for i in range(5))
        assert_allclose(lap, Kprev(pts), rtol=1e-11)


def test_laplace_two_is_log():
    K = fundamental_solution("laplace", 2)
    assert K.is_log
    pts = RNG.normal(size=(10, 2))
    assert_allclose(K(pts), np.log(np.linalg.norm(pts, axis=1)) / (2 * np.pi), rtol=1e-12)


def test_scaled_scalar_solves_its_operator():
    Q = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]])
    K = fundamental_solution("scaled_scalar", 3, Q=Q)
    pts = RNG.normal(size=(20, 3))
    total = np.zeros(len(pts))
    for i, j in itertools.product(range(3), repeat=2):
        alpha = tuple((k == i) + (k == j) for k in range(3))
        total += Q[i, j] * K.derivative(alpha)(pts)
    assert np.abs(total).max() <= 1e-10 * np.abs(K(pts)).max()
    # Q = I reduces to the Laplace kernel
    K0 = fundamental_solution("scaled_scalar", 3, Q=np.eye(3))
    assert_allclose(K0(pts), fundamental_solution("laplace", 3)(pts), rtol=1e-14)


@pytest.mark.parametrize(
    "args",
    [
        ("laplace", 1, {"b": 2}),
        ("polyharmonic", 2, {"b": 2}),
        ("polyharmonic", 4, {"b": 2}),
        ("scaled_scalar", 3, {}),
        ("helmholtz", 3, {}),
    ],
)
def test_unsupported_combinations(args):
    family, n, kw = args
    with pytest.raises(UnsupportedKernel):
        fundamental_solution(family, n, **kw)
    with pytest.raises(UnsupportedKernel):
        fundamental_solution("scaled_scalar", 2, Q=[[1.0, 0.0], [0.0, -1.0]])


def test_derivative_order_limit():
    with pytest.raises(ValueError):
        kernel_derivative(fundamental_solution("laplace", 3), (2, 1, 0))


# --------------------------------------------------------------------------
# Calderón-Zygmund checks and the surface term
# --------------------------------------------------------------------------

@pytest.mark.parametrize("b", [1, 2])
def test_cz_checks_all_top_order(b):
    K = fundamental_solution("laplace" if b == 1 else "polyharmonic", 3, b=b)
    for alpha in multiindices_of_length(3, 2 * b):
        rep = cz_checks(K, alpha)
        assert rep.homogeneity_residual <= 1e-12
        assert rep.mean_zero_residual <= 1e-6
        assert rep.sup_on_sphere > 0


def test_cz_checks_errors():
    with pytest.raises(LogFamilyError):
        cz_checks(fundamental_solution("laplace", 2), (2, 0))
    with pytest.raises(ValueError):
        cz_checks(fundamental_solution("laplace", 3), (1, 0, 0))
    with pytest.raises(LogFamilyError):
        homogeneity_residual(kernel_derivative(fundamental_solution("laplace", 2), (0, 0)), PTS3[:, :2])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0), st.integers(0, 5))
def test_homogeneity_property(t, k):
    K = fundamental_solution("polyharmonic", 5, b=2)
    alpha = multiindices_of_length(5, 3)[k]
    f = K.derivative(alpha)
    assert_allclose(f(t * PTS5), t ** f.degree * f(PTS5), rtol=1e-10)


def test_surface_term_examples():
    K = fundamental_solution("laplace", 3)
    assert surface_term(K, (2, 0, 0), 0)[0, 0] == pytest.approx(1 / 3, abs=1e-12)
    assert abs(surface_term(K, (1, 1, 0), 0)[0, 0]) <= 1e-14
    with pytest.raises(ValueError):
        surface_term(K, (0, 2, 0), 0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_laplace_trace_identity(n):
    K = fundamental_solution("laplace", n)
    total = sum(surface_term(K, tuple(2 * (j == i) for j in range(n)), i)[0, 0] for i in range(n))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_biharmonic_surface_term_independent_of_axis():
    K = fundamental_solution("polyharmonic", 3, b=2)
    # mean of xi^alpha over the sphere: 1/5 for (4,0,0) and 1/15 for (2,2,0)
    assert surface_term(K, (4, 0, 0), 0)[0, 0] == pytest.approx(1 / 5, abs=1e-10)
    assert surface_term(K, (2, 2, 0), 0)[0, 0] == pytest.approx(1 / 15, abs=1e-10)
    assert surface_term(K, (2, 2, 0), 1)[0, 0] == pytest.approx(1 / 15, abs=1e-10)


def test_biharmonic_weighted_trace():
    K = fundamental_solution("polyharmonic", 3, b=2)
    total = 0.0
    for alpha, M in polyharmonic(3, 2).nonzero().items():
        s = next(i for i, a in enumerate(alpha) if a)
        total += M[0, 0] * surface_term(K, alpha, s)[0, 0]
    assert total == pytest.approx(1.0, abs=1e-10)


# --------------------------------------------------------------------------
# fundamental matrix
# --------------------------------------------------------------------------

def test_lame_matrix_matches_kelvin():
    mu, lam = 1.0, 1.5
    G = fundamental_matrix(lame(3, mu, lam))
    pts = RNG.normal(size=(15, 3))
    r = np.linalg.norm(pts, axis=1)
    c1 = (lam + 3 * mu) / (8 * np.pi * mu * (lam + 2 * mu))
    c2 = (lam + mu) / (8 * np.pi * mu * (lam + 2 * mu))
    kelvin = -(c1 / r)[:, None, None] * np.eye(3) - (c2 / r ** 3)[:, None, None] * np.einsum("pi,pj->pij", pts, pts)
    assert_allclose(G(pts), kelvin, rtol=1e-10, atol=1e-15)


def test_diagonal_system_matrix_is_diagonal():
    G = fundamental_matrix(laplacian(3, m=2))
    pts = RNG.normal(size=(5, 3))
    vals = G(pts)
    assert_allclose(vals[:, 0, 1], 0.0, atol=1e-15)
    assert_allclose(vals[:, 0, 0], fundamental_solution("laplace", 3)(pts), rtol=1e-12)


def test_anisotropic_system_rejected():
    with pytest.raises(UnsupportedKernel):
        fundamental_matrix(second_order(np.diag([1.0, 2.0, 3.0])))


# --------------------------------------------------------------------------
# self-cell rules
# --------------------------------------------------------------------------

def test_self_cell_integral_of_inverse_radius():
    form = fundamental_solution("laplace", 3).form
    h = 0.1
    val = self_cell_integral(form, -1.0, h)
    # eight octants by symmetry so no quadrature node lands on the singularity
    octant, _ = integrate.tplquad(
        lambda z, y, x: -1 / (4 * np.pi * math.sqrt(x * x + y * y + z * z)),
        0, h / 2, 0, h / 2, 0, h / 2, epsabs=1e-12,
    )
    oracle = 8 * octant
    assert val == pytest.approx(oracle, rel=1e-4)


def test_self_cell_integral_of_log():
    form = fundamental_solution("laplace", 2).form
    h = 0.2
    val = self_cell_integral(form, None, h)
    quadrant, _ = integrate.dblquad(
        lambda y, x: math.log(math.hypot(x, y)) / (2 * math.pi), 0, h / 2, 0, h / 2, epsabs=1e-13
    )
    oracle = 4 * quadrant
    assert val == pytest.approx(oracle, rel=1e-4)


def test_lattice_constant_vanishes_with_cubic_symmetry():
    K = fundamental_solution("laplace", 3)
    assert abs(lattice_pv_constant(K.form.derivative((2, 0, 0)))) <= 1e-5
    assert abs(cube_pv_constant(K.form.derivative((1, 1, 0)))) <= 1e-12


def test_lattice_constant_nonzero_for_biharmonic():
    K = fundamental_solution("polyharmonic", 3, b=2)
    assert abs(lattice_pv_constant(K.form.derivative((2, 2, 0)))) > 1e-3


# --------------------------------------------------------------------------
# potentials and singular operators
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ball_grid():
    return Grid(0.05, Region.cube(3, 1.2))


def test_potential_of_unit_ball_at_center(ball_grid):
    oracle, _ = integrate.quad(lambda r: (1 / (4 * np.pi * r)) * 4 * np.pi * r ** 2, 0, 1)
    assert oracle == pytest.approx(0.5)
    g = ball_grid
    f = GridFunction(g, g.indicator(Region.ball([0, 0, 0], 1.0)).astype(float))
    v = newtonian_potential(fundamental_solution("laplace", 3), f, Region.ball([0, 0, 0], 0.01))
    assert v.values[g.index_of([0, 0, 0])][0] == pytest.approx(-oracle, rel=0.02)


def test_potential_of_zero_is_zero(ball_grid):
    f = GridFunction(ball_grid, np.zeros(ball_grid.shape))
    v = newtonian_potential(fundamental_solution("laplace", 3), f)
    assert not np.any(v.values)


def test_potential_rejects_boundary_support(ball_grid):
    f = GridFunction(ball_grid, np.ones(ball_grid.shape))
    with pytest.raises(ValueError):
        newtonian_potential(fundamental_solution("laplace", 3), f)


@pytest.fixture(scope="module")
def bump3():
    g = Grid(0.1, Region.cube(3))
    return g, sample({"name": "bump", "radius": 0.8}, g)


def test_fft_matches_direct(bump3):
    g, f = bump3
    K = fundamental_solution("laplace", 3)
    ev = Region.cube(3, 0.5)
    a = newtonian_potential(K, f, ev, method="fft")
    b = newtonian_potential(K, f, ev, method="direct")
    assert_allclose(a.values, b.values, rtol=1e-10, atol=1e-13)
    a = singular_operator(K, (1, 1, 0), f, ev, method="fft")
    b = singular_operator(K, (1, 1, 0), f, ev, method="direct")
    assert_allclose(a.values, b.values, rtol=1e-9, atol=1e-12)


def test_discrete_laplacian_of_potential_reproduces_source():
    errs = []
    for h in (0.1, 0.05):
        g = Grid(h, Region.cube(3))
        f = sample({"name": "bump", "radius": 0.8}, g)
        v = newtonian_potential(fundamental_solution("laplace", 3), f)
        Lv = apply_operator(laplacian(3), GridFunction(g, v.values))
        inner = Region.cube(3, 0.5)
        err = GridFunction(g, Lv.values - f.values, Lv.mask)
        errs.append(lp_norm(err, 2, inner) / lp_norm(f, 2, inner))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_odd_kernel_on_even_source_vanishes_at_center(bump3):
    g, f = bump3
    v = singular_operator(fundamental_solution("laplace", 3), (1, 1, 0), f)
    i = g.index_of([0, 0, 0])
    assert abs(v.values[i][0]) <= 1e-12 * np.abs(v.values).max()


def test_singular_operator_plus_surface_matches_differenced_potential():
    K = fundamental_solution("laplace", 3)
    errs = []
    for h in (0.1, 0.05):
        g = Grid(h, Region.cube(3))
        f = sample({"name": "bump", "radius": 0.8}, g)
        inner = Region.cube(3, 0.7)
        v = newtonian_potential(K, f)
        Dv = finite_difference(GridFunction(g, v.values), (2, 0, 0))
        T = singular_operator(K, (2, 0, 0), f)
        diff = GridFunction(g, T.values + f.values / 3 - Dv.values, Dv.mask)
        errs.append(lp_norm(diff, 2, inner) / lp_norm(GridFunction(g, Dv.values, Dv.mask), 2, inner))
    assert errs[1] < 0.7 * errs[0]


def test_singular_operator_order_check(bump3):
    _, f = bump3
    with pytest.raises(ValueError):
        singular_operator(fundamental_solution("laplace", 3), (1, 0, 0), f)


@settings(max_examples=5, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_operators_are_linear(a, b):
    g = Grid(0.2, Region.cube(3))
    K = fundamental_solution("laplace", 3)
    f1 = sample({"name": "bump", "radius": 0.7}, g)
    f2 = sample({"name": "poly_bump", "radius": 0.6}, g)
    comb = f1 * a + f2 * b
    for op in (
        lambda f: newtonian_potential(K, f),
        lambda f: singular_operator(K, (2, 0, 0), f),
        lambda f: commutator(K, (1, 0, 1), GridFunction(g, np.sin(g.points[..., 0])), f),
    ):
        lhs = op(comb).values
        rhs = a * op(f1).values + b * op(f2).values
        assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_commutator_of_constant_is_bitwise_zero(bump3):
    g, f = bump3
    a = GridFunction(g, np.full(g.shape, 3.7))
    c = commutator(fundamental_solution("laplace", 3), (2, 0, 0), a, f)
    assert_array_equal(c.values, 0.0)


def test_commutator_of_zero_source(bump3):
    g, _ = bump3
    zero = GridFunction(g, np.zeros(g.shape))
    c = commutator(fundamental_solution("laplace", 3), (2, 0, 0), zero, zero)
    assert not np.any(c.values)


def test_commutator_sign_is_nonzero(bump3):
    g, f = bump3
    c = commutator(fundamental_solution("laplace", 3), (2, 0, 0), sample("sign_x1", g), f)
    assert np.abs(c.values).max() > 1e-3


# --------------------------------------------------------------------------
# representation formula
# --------------------------------------------------------------------------

def _residuals(A, K, alpha, spec, n=3, hs=(0.1, 0.05), eval_hw=0.8, **kw):
    out = []
    for h in hs:
        g = Grid(h, Region.cube(n))
        v = sample(spec, g, m=A.m)
        out.append(representation_check(v, A, K, alpha, eval_region=Region.cube(n, eval_hw), **kw))
    return out


def test_representation_zero_function():
    g = Grid(0.2, Region.cube(3))
    v = GridFunction(g, np.zeros(g.shape))
    assert representation_check(v, laplacian(3), fundamental_solution("laplace", 3), (2, 0, 0)) == 0.0


@pytest.mark.parametrize("alpha", [(2, 0, 0), (1, 1, 0), (0, 1, 1)])
def test_representation_laplace_converges(alpha):
    r1, r2 = _residuals(laplacian(3), fundamental_solution("laplace", 3), alpha, {"name": "bump", "radius": 0.8})
    assert r2 <= 0.7 * r1


def test_representation_variable_coefficient():
    K = fundamental_solution("laplace", 3)
    res = []
    for h in (0.1, 0.05):
        g = Grid(h, Region.cube(3))
        a = GridFunction(g, 1 + 0.1 * np.sin(g.points[..., 0]))
        A = laplacian(3).scaled(a)
        v = sample({"name": "bump", "radius": 0.8}, g)
        rt = representation_terms(v, A, K, (2, 0, 0), eval_region=Region.cube(3, 0.8))
        assert np.abs(rt.terms["commutator"]).max() > 0
        res.append(rt.residual)
    assert res[1] < res[0]


def test_representation_two_dimensional_log_family():
    r1, r2 = _residuals(
        laplacian(2), fundamental_solution("laplace", 2), (2, 0), {"name": "bump", "radius": 0.8}, n=2
    )
    assert r2 <= 0.7 * r1


def test_representation_biharmonic():
    # the exponential bump's eighth derivatives are unresolved at h = 0.1; the polynomial bump is not
    r1, r2 = _residuals(
        polyharmonic(3, 2), fundamental_solution("polyharmonic", 3, b=2), (2, 2, 0), {"name": "poly_bump", "radius": 0.6}
    )
    assert r2 <= 0.5 * r1


def test_representation_lame_system():
    A = lame(3)
    r1, r2 = _residuals(A, fundamental_matrix(A), (1, 1, 0), {"name": "bump", "radius": 0.8})
    assert r2 <= 0.7 * r1


def test_frozen_scale_rejects_mismatched_operator():
    with pytest.raises(ValueError):
        frozen_scale(second_order(np.diag([1.0, 2.0, 1.0])), fundamental_solution("laplace", 3))
    assert frozen_scale(laplacian(3).scaled(2.5), fundamental_solution("laplace", 3)) == pytest.approx(2.5)
