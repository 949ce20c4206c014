"""Uniform lattices, grid functions, multiindices and centered finite differences.

Every node of a :class:`Grid` owns an axis-aligned cube of volume ``h**n``
(midpoint rule), so integrals become weighted sums over nodes.  Grid
functions carry a boolean ``mask``; nodes with ``mask == False`` (excluded
singular points, or nodes where a difference stencil does not fit) carry
zero quadrature weight everywhere downstream.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

# Highest per-axis derivative order with a built-in centered stencil.
MAX_ORDER = 6

_EPS = 1e-9


class StencilError(ValueError):
    """A difference stencil does not fit on the grid or inside a region."""


Multiindex = tuple  # tuple[int, ...]


def multiindices_of_length(n: int, k: int) -> list[Multiindex]:
    """All multiindices of dimension ``n`` and length ``k``, lexicographically descending.

    ``multiindices_of_length(2, 2) == [(2, 0), (1, 1), (0, 2)]``.
    """
    if n < 1 or k < 0:
        raise ValueError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    if n == 1:
        return [(k,)]
    out = []
    for first in range(k, -1, -1):
        for rest in multiindices_of_length(n - 1, k - first):
            out.append((first,) + rest)
    return out


def multiindices_up_to(n: int, k: int) -> list[Multiindex]:
    return [a for s in range(k + 1) for a in multiindices_of_length(n, s)]


def unit_index(n: int, i: int, times: int = 1) -> Multiindex:
    return tuple(times if j == i else 0 for j in range(n))


# --------------------------------------------------------------------------
# Regions and grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Axis-aligned box or ball, optionally shrunk inward by ``margin``.

    A ball region keeps its bounding box in ``bounds``.
    """

    bounds: tuple
    shape: str = "box"
    center: tuple | None = None
    radius: float | None = None
    margin: float = 0.0

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError(f"degenerate bounds {bounds}")
        if self.shape not in ("box", "ball"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.shape == "ball":
            if self.center is None or self.radius is None or self.radius <= 0:
                raise ValueError("ball region needs a center and a positive radius")
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
            if self.margin >= self.radius:
                raise ValueError("margin must be smaller than the ball radius")
        else:
            if self.margin >= 0.5 * min(hi - lo for lo, hi in bounds):
                raise ValueError("margin must be below half the smallest side length")

    @classmethod
    def box(cls, bounds, margin: float = 0.0) -> Region:
        return cls(tuple(bounds), "box", margin=margin)

    @classmethod
    def cube(cls, n: int, half_width: float = 1.0, margin: float = 0.0) -> Region:
        return cls(((-half_width, half_width),) * n, "box", margin=margin)

    @classmethod
    def ball(cls, center, radius: float, margin: float = 0.0) -> Region:
        center = tuple(float(c) for c in center)
        bounds = tuple((c - radius, c + radius) for c in center)
        return cls(bounds, "ball", center=center, radius=float(radius), margin=margin)

    @property
    def n(self) -> int:
        return len(self.bounds)

    def shrink(self, margin: float) -> Region:
        """Same region with an additional inward margin (models Omega' in Omega'')."""
        return Region(self.bounds, self.shape, self.center, self.radius, self.margin + margin)

    @property
    def diameter(self) -> float:
        if self.shape == "ball":
            return 2.0 * (self.radius - self.margin)
        return math.sqrt(sum((hi - lo - 2 * self.margin) ** 2 for lo, hi in self.bounds))

    @property
    def measure(self) -> float:
        if self.shape == "ball":
            rho = self.radius - self.margin
            return math.pi ** (self.n / 2) / math.gamma(self.n / 2 + 1) * rho ** self.n
        return math.prod(hi - lo - 2 * self.margin for lo, hi in self.bounds)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for points of shape ``(..., n)`` (cell-center inclusion, closed)."""
        points = np.asarray(points, dtype=float)
        if self.shape == "ball":
            d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=-1)
            rho = self.radius - self.margin
            return d2 <= rho * rho * (1 + _EPS)
        inside = np.ones(points.shape[:-1], dtype=bool)
        for i, (lo, hi) in enumerate(self.bounds):
            tol = _EPS * max(1.0, hi - lo)
            inside &= points[..., i] >= lo + self.margin - tol
            inside &= points[..., i] <= hi - self.margin + tol
        return inside

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "bounds": [list(b) for b in self.bounds], "margin": self.margin}
        if self.shape == "ball":
            d.update(center=list(self.center), radius=self.radius)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Region:
        margin = float(d.get("margin", 0.0))
        if d.get("shape", "box") == "ball":
            return cls.ball(d["center"], d["radius"], margin)
        return cls.box(d["bounds"], margin)


@dataclass(frozen=True)
class Grid:
    """The pitch-``h`` lattice ``h * Z^n`` clipped to the bounding box of ``region``."""

    h: float
    region: Region

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.n < 2:
            raise ValueError("grid dimension must be at least 2")
        if min(self.shape) < 3:
            raise ValueError(f"need at least 3 nodes per axis, got shape {self.shape}")

    @property
    def n(self) -> int:
        return self.region.n

    @cached_property
    def index_ranges(self) -> tuple:
        out = []
        for lo, hi in self.region.bounds:
            kmin = math.ceil(lo / self.h - _EPS)
            kmax = math.floor(hi / self.h + _EPS)
            out.append((kmin, kmax))
        return tuple(out)

    @cached_property
    def shape(self) -> tuple:
        return tuple(kmax - kmin + 1 for kmin, kmax in self.index_ranges)

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.arange(kmin, kmax + 1) * self.h for kmin, kmax in self.index_ranges)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (n,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        pts.setflags(write=False)
        return pts

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def index_of(self, x) -> tuple:
        """Index of the node at (or nearest to) ``x``."""
        idx = []
        for xi, (kmin, kmax) in zip(x, self.index_ranges):
            k = int(round(float(xi) / self.h)) - kmin
            if not 0 <= k <= kmax - kmin:
                raise ValueError(f"point {tuple(x)} lies outside the grid")
            idx.append(k)
        return tuple(idx)

    def indicator(self, region: Region | None) -> np.ndarray:
        if region is None:
            return np.ones(self.shape, dtype=bool)
        return region.contains(self.points)

    def refine(self) -> Grid:
        return Grid(self.h / 2, self.region)

    def to_dict(self) -> dict:
        return {"h": self.h, "region": self.region.to_dict()}


# --------------------------------------------------------------------------
# Grid functions
# --------------------------------------------------------------------------

class GridFunction:
    """Immutable ``m``-vector samples on a grid.

    ``values`` has shape ``grid.shape + (m,)``; ``mask`` marks the nodes that
    carry data.  Values at masked-out nodes are stored as zero.
    """

    __slots__ = ("grid", "values", "mask")

    def __init__(self, grid: Grid, values, mask=None):
        values = np.array(values, dtype=float)
        if values.shape == grid.shape:
            values = values[..., None]
        if values.shape[:-1] != grid.shape:
            raise ValueError(f"values of shape {values.shape} do not match grid {grid.shape}")
        if mask is None:
            mask = np.ones(grid.shape, dtype=bool)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != grid.shape:
                raise ValueError("mask shape does not match grid")
        values[~mask] = 0.0
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite entries at unmasked nodes")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def component(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.values[..., k : k + 1], self.mask)

    def scalar(self) -> np.ndarray:
        if self.m != 1:
            raise ValueError("expected a scalar grid function")
        return self.values[..., 0]

    def restrict(self, mask) -> GridFunction:
        return GridFunction(self.grid, self.values, self.mask & np.asarray(mask, dtype=bool))

    def _combine(self, other, op):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid functions live on different grids")
            return GridFunction(self.grid, op(self.values, other.values), self.mask & other.mask)
        return GridFunction(self.grid, op(self.values, other), self.mask)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values, self.mask)

    def __repr__(self):
        return f"GridFunction(shape={self.grid.shape}, m={self.m}, h={self.grid.h})"


def zeros_like(u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, np.zeros_like(u.values), u.mask)


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def centered_stencil(k: int) -> tuple[int, tuple[float, ...]]:
    """Half width ``P`` and weights for the second-order centered ``k``-th derivative.

    Weights are exact rationals obtained from the Taylor conditions on the
    ``2P + 1`` points ``-P..P`` (``P = (k + 1) // 2``), then converted to float;
    they must be divided by ``h**k``.
    """
    if not 0 <= k <= MAX_ORDER:
        raise StencilError(f"derivative order {k} not supported (max {MAX_ORDER})")
    if k == 0:
        return 0, (1.0,)
    P = (k + 1) // 2
    size = 2 * P + 1
    # Vandermonde rows: sum_j w_j j^q / q! = [q == k]
    rows = [[Fraction(j) ** q / math.factorial(q) for j in range(-P, P + 1)] for q in range(size)]
    rhs = [Fraction(int(q == k)) for q in range(size)]
    for col in range(size):
        piv = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                f = rows[r][col] / rows[col][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
                rhs[r] -= f * rhs[col]
    weights = tuple(float(rhs[i] / rows[i][i]) for i in range(size))
    return P, weights


def _diff_axis(values: np.ndarray, mask: np.ndarray, axis: int, k: int, h: float):
    P, weights = centered_stencil(k)
    N = values.shape[axis]
    if N < 2 * P + 1:
        raise StencilError(f"axis {axis} has {N} nodes; order-{k} stencil needs {2 * P + 1}")
    out = np.zeros_like(values)
    out_mask = np.zeros_like(mask)
    inner = [slice(None)] * values.ndim
    inner[axis] = slice(P, N - P)
    acc = np.zeros_like(values[tuple(inner)])
    m_acc = np.ones_like(mask[tuple(inner[:-1])])
    for j, w in zip(range(-P, P + 1), weights):
        sl = [slice(None)] * values.ndim
        sl[axis] = slice(P + j, N - P + j)
        acc = acc + w * values[tuple(sl)]
        m_acc = m_acc & mask[tuple(sl[:-1])]
    out[tuple(inner)] = acc / h ** k
    out_mask[tuple(inner[:-1])] = m_acc
    return out, out_mask


def finite_difference(u: GridFunction, alpha: Sequence[int], axis_order: Iterable[int] | None = None) -> GridFunction:
    """Centered second-order approximation of ``D^alpha u``.

    Per-axis stencils are composed in ``axis_order`` (default ``0..n-1``).
    Nodes where the composed stencil does not fit, or touches a masked node,
    are masked in the result.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != u.grid.n or min(alpha) < 0:
        raise ValueError(f"bad multiindex {alpha} for dimension {u.grid.n}")
    values, mask = u.values, u.mask
    order = range(u.grid.n) if axis_order is None else axis_order
    for axis in order:
        if alpha[axis]:
            values, mask = _diff_axis(values, mask, axis, alpha[axis], u.grid.h)
    return GridFunction(u.grid, values, mask)


def stencil_half_width(alpha: Sequence[int]) -> tuple[int, ...]:
    return tuple(centered_stencil(a)[0] for a in alpha)


def check_stencil_fits(grid: Grid, region: Region | None, alphas: Iterable[Sequence[int]]) -> None:
    """Raise :class:`StencilError` if a region node is too close to the grid edge for any ``alpha``."""
    inside = grid.indicator(region)
    if not inside.any():
        raise ValueError("region contains no grid nodes")
    idx = np.nonzero(inside)
    for alpha in alphas:
        for axis, P in enumerate(stencil_half_width(alpha)):
            if P and (idx[axis].min() < P or idx[axis].max() > grid.shape[axis] - 1 - P):
                raise StencilError(f"stencil for {tuple(alpha)} does not fit inside the region")


def all_node_indices(shape) -> Iterable[tuple]:
    return itertools.product(*(range(s) for s in shape))
