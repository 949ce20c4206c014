import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from morreylab.grid import Grid, Region
from morreylab.harness import (
    SUITES,
    Experiment,
    caccioppoli_check,
    caccioppoli_table,
    commutator_smallness_scan,
    cutoff,
    cutoff_derivative_report,
    default_config,
    interpolation_check,
    interpolation_constants,
    regularity_experiment,
    run_suite,
    theta_prime,
    theta_seminorms,
)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 0.999))
def test_theta_prime_between_theta_and_one(theta):
    tp = theta_prime(theta)
    assert theta < tp < 1


def test_theta_prime_value():
    assert theta_prime(0.5) == pytest.approx(0.625)


@pytest.fixture(scope="module")
def grid2():
    return Grid(0.01, Region.cube(2))


@pytest.mark.parametrize("b", [1, 2])
def test_cutoff_plateau_and_support(grid2, b):
    r, theta = 0.8, 0.5
    phi = cutoff(grid2, [0.0, 0.0], r, theta, b)
    rho = np.linalg.norm(grid2.points, axis=-1)
    vals = phi.values[..., 0]
    assert np.all(vals[rho <= theta * r] == 1.0)
    assert np.all(vals[rho >= theta_prime(theta) * r] == 0.0)
    assert vals.min() >= 0 and vals.max() <= 1


def test_cutoff_gradient_within_envelope(grid2):
    rep = cutoff_derivative_report(grid2, [0.0, 0.0], 0.8, 0.5, b=1, orders=(1, 2))
    fine = cutoff_derivative_report(Grid(0.005, Region.cube(2)), [0.0, 0.0], 0.8, 0.5, b=1)
    target = rep[0]["spline_constant"]
    # measured slope / envelope tends to the spline constant at second order
    e1, e2 = abs(rep[0]["ratio"] - target), abs(fine[0]["ratio"] - target)
    assert e2 < e1 / 3
    assert e2 / target < 0.01
    assert rep[1]["ratio"] < 50


def test_cutoff_rejects_bad_theta(grid2):
    with pytest.raises(ValueError):
        cutoff(grid2, [0.0, 0.0], 0.5, 1.0)
    with pytest.raises(ValueError):
        cutoff(grid2, [0.0, 0.0], 2.0, 0.5)


def test_experiment_roundtrip_and_validation():
    e = Experiment("x", "laplace", 2, {"name": "sin_cos"}, 0.1, center=(0.1, 0.0), exclude=((0.0, 0.0),))
    assert Experiment.from_dict(e.to_dict()) == e
    assert e.radii == (0.8, 0.4, 0.2)
    assert e.refined().h == 0.05
    with pytest.raises(ValueError):
        Experiment("x", "laplace", 2, {"name": "sin_cos"}, 0.1, theta=1.2)
    with pytest.raises(ValueError):
        Experiment("x", "laplace", 2, {"name": "sin_cos"}, 0.1, r0=2.0)
    with pytest.raises(KeyError):
        Experiment("x", "wave", 2, {"name": "sin_cos"}, 0.1).b


def test_caccioppoli_of_zero_is_trivial():
    e = Experiment("const", "laplace", 2, {"name": "constant", "c": 2.0}, 0.05)
    rep = caccioppoli_check(e, 0.8)
    # D^2 of a constant vanishes, so the inequality holds with C = 0
    assert rep.lhs <= 1e-12 and rep.implied_constant <= 1e-12


def test_caccioppoli_harmonic_has_no_source():
    e = Experiment("hq", "laplace", 2, {"name": "harmonic_quadratic"}, 0.05)
    table = caccioppoli_table(e)
    assert len(table) == 3
    for rep in table:
        assert rep.f_norm <= 1e-10
        assert rep.implied_constant > 0
        assert len(rep.to_row()) == 7


def test_interpolation_constants_oracle():
    th = {0: 2.0, 1: 1.0, 2: 0.5}
    consts = interpolation_constants(th, 1, 2, [0.5, 2.0, 3.0])
    assert consts[0] == pytest.approx((1.0 - 0.25) * 0.5 / 2.0)
    assert consts[1] == 0.0 and consts[2] == 0.0
    assert interpolation_constants({0: 0.0, 1: 1.0, 2: 0.0}, 1, 2, [0.5]) == [math.inf]


def test_theta_seminorm_definition():
    e = Experiment("lin", "laplace", 2, {"name": "coordinate", "axis": 0}, 0.05, thetas=(0.5,))
    th = theta_seminorms(e, 0.8, [1])
    # D u = (1, 0); Morrey norm of 1 over B_{0.4} is sqrt(pi * 0.4) up to O(h)
    expected = 0.5 * 0.5 * 0.8 * math.sqrt(math.pi * 0.4)
    assert th[1] == pytest.approx(expected, rel=0.05)
    with pytest.raises(ValueError):
        theta_seminorms(e, 0.8, [3])


def test_interpolation_check_spread_definitions():
    e = Experiment("sc", "laplace", 2, {"name": "sin_cos"}, 0.05, half_width=2.0, r0=1.2)
    rep = interpolation_check(e, 1.2)
    assert len(rep.constants) == 4
    assert rep.spread == max(rep.constants) / min(rep.constants)
    with pytest.raises(ValueError):
        interpolation_check(e, 1.2, eps_list=(2.5,))
    with pytest.raises(ValueError):
        interpolation_check(e, 1.2, s=2)


def test_commutator_scan_constant_coefficient():
    rows = commutator_smallness_scan({"name": "constant"}, radii=(0.5, 0.25))
    for row in rows:
        assert row.ratio == 0.0
        assert row.eta == 0.0
        assert row.h == row.r / 8


def test_commutator_scan_resolution_matched():
    smooth = commutator_smallness_scan({"name": "coordinate", "axis": 0}, radii=(0.5, 0.25))
    # for a linear coefficient the commutator scales exactly like r
    assert smooth[1].ratio / smooth[0].ratio == pytest.approx(0.5, rel=1e-8)
    assert smooth[1].eta / smooth[0].eta == pytest.approx(0.5, rel=1e-8)


def test_regularity_requires_holder_case():
    e = Experiment("p", "laplace", 3, {"name": "power", "gamma": 1.5}, 0.2, half_width=0.8, p=2.0, lam=1.0,
                   exclude=((0.0, 0.0, 0.0),))
    with pytest.raises(ValueError):
        regularity_experiment(e, 1)  # p = n - lambda is the BMO line


def test_regularity_report_fields():
    e = Experiment("p", "laplace", 3, {"name": "power", "gamma": 1.5}, 0.2, half_width=0.8, p=4.0, lam=1.0,
                   exclude=((0.0, 0.0, 0.0),))
    rep = regularity_experiment(e, 1, inner_radius=0.5)
    assert rep.sigma == pytest.approx(0.5)
    assert rep.sigma_inflated == pytest.approx(0.6)
    assert rep.campanato_mu == pytest.approx(5.0)
    assert rep.holder > 0 and rep.data_norm > 0


def test_default_configs_and_unknown_suite():
    for name in SUITES:
        assert isinstance(default_config(name), dict)
    with pytest.raises(ValueError):
        run_suite("nope")
    with pytest.raises(ValueError):
        default_config("nope")


def test_suite_config_override_is_recorded():
    res = run_suite("commutator", {"radii": [0.5, 0.25]})
    assert res.details["config"]["radii"] == [0.5, 0.25]
    assert len(res.rows) == 4


def test_suite_thread_count_does_not_change_rows():
    a = run_suite("caccioppoli", threads=1)
    b = run_suite("caccioppoli", threads=3)
    assert a.rows == b.rows
    assert a.properties == b.properties
