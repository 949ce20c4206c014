import numpy as np
import pytest
from numpy.testing import assert_allclose

from morreylab.catalog import CATALOG, CatalogError, CatalogSpec, evaluate, sample
from morreylab.grid import Grid, Region


@pytest.fixture
def grid():
    return Grid(0.25, Region.cube(2))


def test_parse_forms():
    assert CatalogSpec.parse("bump") == CatalogSpec("bump", {})
    s = CatalogSpec.parse({"name": "power", "gamma": 0.5})
    assert s.params == {"gamma": 0.5}
    assert CatalogSpec.parse(s.to_dict()) == s
    with pytest.raises(CatalogError):
        CatalogSpec.parse({"gamma": 1})


def test_unknown_and_bad_params():
    with pytest.raises(CatalogError):
        evaluate("nope", np.zeros((1, 2)))
    with pytest.raises(CatalogError):
        evaluate({"name": "bump", "wrong": 1}, np.zeros((1, 2)))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_every_entry_samples_finite(name, grid):
    params = {"monomial": {"exponents": [1, 2]}, "power": {"gamma": 0.5}}.get(name, {})
    u = sample({"name": name, **params}, grid)
    assert np.all(np.isfinite(u.values))


def test_singular_point_excluded(grid):
    u = sample({"name": "power", "gamma": -0.5}, grid)
    i = grid.index_of([0.0, 0.0])
    assert not u.mask[i]
    assert u.mask.sum() == grid.size - 1


def test_explicit_exclusion_and_shifted_singularity(grid):
    u = sample("sign_x1", grid, exclude=[(0.5, 0.5)])
    assert not u.mask[grid.index_of([0.5, 0.5])]
    g = Grid(0.1, Region.cube(2))
    v = sample({"name": "power", "gamma": -1.0, "center": [0.3, -0.2]}, g)
    assert not v.mask[g.index_of([0.3, -0.2])]
    assert v.mask.sum() == g.size - 1


def test_vector_sampling(grid):
    u = sample(["constant", {"name": "coordinate", "axis": 1}], grid, m=2)
    assert u.m == 2
    assert_allclose(u.values[..., 1], grid.points[..., 1])
    with pytest.raises(CatalogError):
        sample(["constant"], grid, m=2)


def test_bump_support_and_peak():
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    vals = evaluate({"name": "bump", "radius": 1.0}, pts)
    assert vals[0] == 1.0
    assert 0 < vals[1] < 1
    assert vals[2] == 0.0
