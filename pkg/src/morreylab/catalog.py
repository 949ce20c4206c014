"""Built-in catalog of manufactured functions sampled onto grids.

A catalog selection is a name plus keyword parameters, e.g.
``{"name": "power", "gamma": -0.5}``.  Entries that blow up at a point
declare it, and :func:`sample` flags the corresponding node as excluded
(zero quadrature weight) instead of failing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, GridFunction


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    fn: Callable
    singular: Callable | None = None  # params -> list of singular points, or None
    doc: str = ""


def _center(x, params):
    c = params.get("center")
    if c is None:
        return x
    return x - np.asarray(c, dtype=float)


def _radius(x, params):
    return np.sqrt(np.sum(_center(x, params) ** 2, axis=-1))


def _constant(x, c=1.0):
    return np.full(x.shape[:-1], float(c))


def _coordinate(x, axis=0):
    return x[..., axis].copy()


def _monomial(x, exponents):
    out = np.ones(x.shape[:-1])
    for i, e in enumerate(exponents):
        out = out * x[..., i] ** e
    return out


def _power(x, gamma, center=None):
    r = _radius(x, {"center": center})
    with np.errstate(divide="ignore", invalid="ignore"):
        return r ** float(gamma)


def _power_singular(params):
    if float(params["gamma"]) < 0:
        return [params.get("center")]
    return []


def _sign(x, axis=0):
    return np.sign(x[..., axis])


def _sin_cos(x, k=1.0):
    return np.sin(k * x[..., 0]) * np.cos(k * x[..., 1])


def _harmonic_quadratic(x):
    return x[..., 0] ** 2 - x[..., 1] ** 2


def _exp_cos(x, k=1.0):
    return np.exp(k * x[..., 0]) * np.cos(k * x[..., 1])


def _bump(x, radius=1.0, center=None):
    rho2 = np.sum(_center(x, {"center": center}) ** 2, axis=-1) / float(radius) ** 2
    out = np.zeros(rho2.shape)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def _poly_bump(x, radius=1.0, k=6, center=None):
    rho2 = np.sum(_center(x, {"center": center}) ** 2, axis=-1) / float(radius) ** 2
    return np.where(rho2 < 1.0, (1.0 - np.minimum(rho2, 1.0)) ** int(k), 0.0)


def _one_minus_cos_cos(x, k=1.0, power=1):
    return (1.0 - np.cos(k * x[..., 0]) * np.cos(k * x[..., 1])) ** int(power)


def _one_plus_sin(x, amplitude=0.1, axis=0):
    return 1.0 + float(amplitude) * np.sin(x[..., axis])


CATALOG: dict[str, Entry] = {
    "constant": Entry(_constant, doc="c"),
    "coordinate": Entry(_coordinate, doc="x[axis] (0-based axis)"),
    "monomial": Entry(_monomial, doc="prod x_i**e_i"),
    "power": Entry(_power, _power_singular, doc="|x - center|**gamma"),
    "sign_x1": Entry(_sign, doc="sign(x[axis]), axis 0 by default"),
    "sin_cos": Entry(_sin_cos, doc="sin(k x1) cos(k x2)"),
    "harmonic_quadratic": Entry(_harmonic_quadratic, doc="x1**2 - x2**2"),
    "exp_cos": Entry(_exp_cos, doc="exp(k x1) cos(k x2), harmonic in (x1, x2)"),
    "bump": Entry(_bump, doc="exp(1 - 1/(1 - |x-c|^2/R^2)) inside the ball, 0 outside"),
    "poly_bump": Entry(_poly_bump, doc="(1 - |x-c|^2/R^2)_+**k"),
    "one_minus_cos_cos": Entry(_one_minus_cos_cos, doc="(1 - cos(k x1) cos(k x2))**power, vanishes to order 2*power at 0"),
    "one_plus_sin": Entry(_one_plus_sin, doc="1 + amplitude*sin(x[axis])"),
}


@dataclass(frozen=True)
class CatalogSpec:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, spec) -> CatalogSpec:
        if isinstance(spec, CatalogSpec):
            return spec
        if isinstance(spec, str):
            return cls(spec, {})
        if isinstance(spec, dict):
            d = dict(spec)
            try:
                name = d.pop("name")
            except KeyError:
                raise CatalogError(f"catalog selection {spec!r} has no 'name'") from None
            return cls(name, d)
        raise CatalogError(f"cannot interpret catalog selection {spec!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}


def evaluate(spec, points: np.ndarray) -> np.ndarray:
    """Evaluate a catalog function at ``points`` of shape ``(..., n)``."""
    spec = CatalogSpec.parse(spec)
    if spec.name not in CATALOG:
        raise CatalogError(f"unknown catalog function {spec.name!r}; known: {sorted(CATALOG)}")
    try:
        return np.asarray(CATALOG[spec.name].fn(np.asarray(points, dtype=float), **spec.params), dtype=float)
    except TypeError as exc:
        raise CatalogError(f"bad parameters for {spec.name!r}: {exc}") from None


def singular_points(spec, n: int) -> list[np.ndarray]:
    spec = CatalogSpec.parse(spec)
    entry = CATALOG[spec.name]
    if entry.singular is None:
        return []
    return [np.zeros(n) if c is None else np.asarray(c, dtype=float) for c in entry.singular(spec.params)]


def sample(spec, grid: Grid, m: int = 1, exclude=()) -> GridFunction:
    """Sample a catalog function (or one per component) at the grid nodes.

    ``spec`` may be a single selection, replicated over ``m`` components,
    or a list of ``m`` selections.  Nodes at declared singular points and at
    the points in ``exclude`` are masked.  Any other non-finite value is an
    error.
    """
    specs = list(spec) if isinstance(spec, (list, tuple)) else [spec] * m
    if len(specs) != m:
        raise CatalogError(f"got {len(specs)} catalog selections for m={m}")
    mask = np.ones(grid.shape, dtype=bool)
    values = np.empty(grid.shape + (m,))
    flagged = [np.asarray(p, dtype=float) for p in exclude]
    for k, s in enumerate(specs):
        values[..., k] = evaluate(s, grid.points)
        flagged += singular_points(s, grid.n)
    for p in flagged:
        d2 = np.sum((grid.points - p) ** 2, axis=-1)
        hit = d2 <= (1e-9 * grid.h) ** 2
        mask &= ~hit
    bad = ~np.all(np.isfinite(values), axis=-1) & mask
    if bad.any():
        where = grid.points[bad][0]
        raise CatalogError(f"non-finite value at unexcluded node {tuple(where)}")
    values[~mask] = 0.0
    return GridFunction(grid, values, mask)
