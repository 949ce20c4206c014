"""Discrete estimators for L^p, Sobolev, Morrey, BMO/VMO, Campanato and Hölder (semi)norms.

All integrals are midpoint sums over nodes (weight ``h**n``) restricted to
the region and to the function's mask.  A sup over "all balls" is a max over
a :class:`BallFamily`: grid-node centers times a finite radius list.
Vector-valued functions use the component-sum convention
``||u|| = sum_k ||u_k||``.

Ties in a sup are broken by the smallest center index, then the smallest
radius.  Sums over a ball are taken in a fixed offset order (or by a
zero-padded FFT convolution for large families), so results do not depend
on scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .grid import (
    Grid,
    GridFunction,
    Region,
    check_stencil_fits,
    finite_difference,
    multiindices_up_to,
)

# Above this many (center, offset) pairs, ball sums switch to FFT convolution.
DIRECT_LIMIT = 4_000_000
_CHUNK = 2_000_000


@dataclass(frozen=True, eq=False)
class BallFamily:
    """Finite family of balls: node-index ``centers`` (k, n) times increasing ``radii``."""

    grid: Grid
    centers: np.ndarray
    radii: tuple

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ValueError("empty ball family")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        centers = np.asarray(self.centers, dtype=np.int64).reshape(-1, self.grid.n)
        if len(centers) == 0:
            raise ValueError("ball family has no centers")
        centers.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def dyadic(
        cls,
        grid: Grid,
        region: Region | None = None,
        r_min: float | None = None,
        r_max: float | None = None,
        center_stride: int = 1,
        center_region: Region | None = None,
    ) -> BallFamily:
        """Radii ``h * 2**k`` (k >= 1) below the cap, then the cap itself.

        The cap is ``min(1, diameter of region)`` unless ``r_max`` is given.
        Centers are the nodes in ``center_region`` (default: ``region``) whose
        lattice coordinates are multiples of ``center_stride``.
        """
        region = region or grid.region
        cap = r_max if r_max is not None else min(1.0, region.diameter)
        lo = r_min if r_min is not None else 2 * grid.h
        radii = []
        r = 2 * grid.h
        while r < cap * (1 - 1e-9):
            if r >= lo * (1 - 1e-9):
                radii.append(r)
            r *= 2
        radii.append(cap)
        return cls(grid, _center_indices(grid, center_region or region, center_stride), tuple(radii))

    @classmethod
    def at_points(cls, grid: Grid, points, radii) -> BallFamily:
        return cls(grid, np.array([grid.index_of(p) for p in points]), tuple(radii))

    def with_radii(self, radii) -> BallFamily:
        return BallFamily(self.grid, self.centers, tuple(radii))

    def center_coords(self, i: int) -> tuple:
        return tuple(float(v) for v in self.grid.points[tuple(self.centers[i])])


def _center_indices(grid: Grid, region: Region, stride: int) -> np.ndarray:
    inside = grid.indicator(region)
    if stride > 1:
        for axis, (kmin, _) in enumerate(grid.index_ranges):
            k = np.arange(grid.shape[axis]) + kmin
            keep = (k % stride) == 0
            shape = [1] * grid.n
            shape[axis] = -1
            inside = inside & keep.reshape(shape)
    idx = np.argwhere(inside)
    if len(idx) == 0:
        raise ValueError("no ball centers inside the region")
    return idx


@lru_cache(maxsize=256)
def ball_offsets(n: int, r_over_h: float) -> np.ndarray:
    """Integer offsets ``o`` with ``|o| <= r/h`` (closed ball, cell-center inclusion)."""
    R = int(math.floor(r_over_h * (1 + 1e-9)))
    rng = np.arange(-R, R + 1)
    mesh = np.stack(np.meshgrid(*([rng] * n), indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.sum(mesh.astype(float) ** 2, axis=1) <= (r_over_h ** 2) * (1 + 1e-9)
    out = mesh[keep]
    out.setflags(write=False)
    return out


@dataclass
class BallSup:
    """Result of a sup over a ball family, with the maximizing ball."""

    value: float
    center: tuple | None
    radius: float | None
    radii: tuple = ()
    profile: tuple = ()  # per-radius sup, same units as value
    components: list = field(default_factory=list)


def _weights(u: GridFunction, region: Region | None) -> np.ndarray:
    return (u.mask & u.grid.indicator(region)).astype(float) * u.grid.cell_volume


def _pad(arr: np.ndarray, R: int) -> np.ndarray:
    return np.pad(arr, R, mode="constant")


def _flat_gather_index(shape_padded, centers, offsets, R):
    strides = np.array([math.prod(shape_padded[i + 1 :]) for i in range(len(shape_padded))], dtype=np.int64)
    c = (centers + R) @ strides
    o = offsets @ strides
    return c, o


def ball_sums(W: np.ndarray, centers: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """``sum_{o in offsets} W[c + o]`` for every center ``c`` (zero outside the array)."""
    R = int(np.abs(offsets).max()) if len(offsets) else 0
    if len(centers) * len(offsets) <= DIRECT_LIMIT:
        Wp = _pad(W, R).ravel()
        c, o = _flat_gather_index(tuple(s + 2 * R for s in W.shape), centers, offsets, R)
        out = np.empty(len(c))
        step = max(1, _CHUNK // max(1, len(o)))
        for i in range(0, len(c), step):
            out[i : i + step] = Wp[c[i : i + step, None] + o[None, :]].sum(axis=1)
        return out
    kernel = np.zeros((2 * R + 1,) * W.ndim)
    kernel[tuple((offsets + R).T)] = 1.0
    conv = fftconvolve(W, kernel, mode="same")
    out = conv[tuple(centers.T)]
    if W.min() >= 0:
        # FFT roundoff can dip below zero for non-negative integrands
        out = np.maximum(out, 0.0)
    return out


def _pick(vals: np.ndarray, family: BallFamily, value_map) -> BallSup:
    """Max of ``vals[radius_index, center_index]`` with deterministic tie-breaking."""
    best = vals.max()
    ties = np.argwhere(vals == best)
    # ties: rows (r_idx, c_idx); smallest center, then smallest radius
    order = np.lexsort((ties[:, 0], ties[:, 1]))
    ri, ci = ties[order[0]]
    profile = tuple(value_map(v, r) for v, r in zip(vals.max(axis=1), family.radii))
    return BallSup(
        value=value_map(best, None),
        center=family.center_coords(ci),
        radius=family.radii[ri],
        radii=family.radii,
        profile=profile,
    )


def _vector_sup(u: GridFunction, scalar_fn) -> BallSup:
    parts = [scalar_fn(u.component(k)) for k in range(u.m)]
    if u.m == 1:
        return parts[0]
    top = max(parts, key=lambda b: b.value)
    return BallSup(
        value=float(sum(b.value for b in parts)),
        center=top.center,
        radius=top.radius,
        radii=top.radii,
        profile=tuple(sum(vals) for vals in zip(*(b.profile for b in parts))),
        components=parts,
    )


# --------------------------------------------------------------------------
# L^p and Sobolev
# --------------------------------------------------------------------------

def lp_norm(u: GridFunction, p: float, region: Region | None = None) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    w = _weights(u, region)
    if not w.any():
        raise ValueError("empty region")
    total = 0.0
    for k in range(u.m):
        total += float(np.sum(w * np.abs(u.values[..., k]) ** p)) ** (1.0 / p)
    return total


def sobolev_norm(u: GridFunction, order: int, p: float, region: Region | None = None) -> float:
    """``sum_{|alpha| <= order} ||D^alpha u||_p`` over the region."""
    alphas = multiindices_up_to(u.grid.n, order)
    check_stencil_fits(u.grid, region, alphas)
    return sum(lp_norm(finite_difference(u, a), p, region) for a in alphas)


# --------------------------------------------------------------------------
# Morrey
# --------------------------------------------------------------------------

def _ball_power_sums(u: GridFunction, p: float, region, family: BallFamily) -> np.ndarray:
    w = _weights(u, region)
    W = w * np.abs(u.scalar()) ** p
    return np.stack([ball_sums(W, family.centers, ball_offsets(u.grid.n, r / u.grid.h)) for r in family.radii])


def morrey_norm(
    u: GridFunction,
    p: float,
    lam: float,
    region: Region | None = None,
    balls: BallFamily | None = None,
    full_output: bool = False,
):
    """``(max_{(c, r)} r**-lam * int_{B_r(c) cap region} |u|^p)**(1/p)``."""
    if not 0 <= lam < u.grid.n:
        raise ValueError(f"lambda must lie in [0, n), got {lam}")
    balls = balls or BallFamily.dyadic(u.grid, region)

    def scalar(v):
        S = _ball_power_sums(v, p, region, balls)
        scaled = S * np.array(balls.radii)[:, None] ** (-lam)
        return _pick(scaled, balls, lambda x, _r: float(x) ** (1.0 / p))

    res = _vector_sup(u, scalar)
    return res if full_output else res.value


def sobolev_morrey_norm(
    u: GridFunction,
    order: int,
    p: float,
    lam: float,
    region: Region | None = None,
    balls: BallFamily | None = None,
) -> float:
    alphas = multiindices_up_to(u.grid.n, order)
    check_stencil_fits(u.grid, region, alphas)
    balls = balls or BallFamily.dyadic(u.grid, region)
    return sum(morrey_norm(finite_difference(u, a), p, lam, region, balls) for a in alphas)


# --------------------------------------------------------------------------
# Oscillation-type seminorms (BMO, VMO, Campanato)
# --------------------------------------------------------------------------

def _oscillations(u: GridFunction, p: float, region, family: BallFamily, radii) -> np.ndarray:
    """Per (radius, center): ``(sum w |u - mean|^p, sum w)`` over the ball cap region."""
    w = _weights(u, region)
    U = u.scalar()
    out = np.zeros((len(radii), len(family.centers)))
    vol = np.zeros_like(out)
    for ri, r in enumerate(radii):
        offsets = ball_offsets(u.grid.n, r / u.grid.h)
        R = int(np.abs(offsets).max())
        Up, Wp = _pad(U, R).ravel(), _pad(w, R).ravel()
        c, o = _flat_gather_index(tuple(s + 2 * R for s in U.shape), family.centers, offsets, R)
        step = max(1, _CHUNK // len(o))
        for i in range(0, len(c), step):
            idx = c[i : i + step, None] + o[None, :]
            vals, wts = Up[idx], Wp[idx]
            mass = wts.sum(axis=1)
            safe = np.where(mass > 0, mass, 1.0)
            mean = (wts * vals).sum(axis=1) / safe
            out[ri, i : i + step] = (wts * np.abs(vals - mean[:, None]) ** p).sum(axis=1)
            vol[ri, i : i + step] = mass
    return out, vol


def _mean_oscillation_sup(u: GridFunction, region, family: BallFamily, radii) -> BallSup:
    osc, vol = _oscillations(u, 1.0, region, family, radii)
    vals = np.where(vol > 0, osc / np.where(vol > 0, vol, 1.0), 0.0)
    return _pick(vals, family.with_radii(radii), lambda x, _r: float(x))


def bmo_seminorm(u: GridFunction, region: Region | None = None, balls: BallFamily | None = None, full_output=False):
    """Max over balls of ``(1/|B cap region|) int |u - u_B|``."""
    balls = balls or BallFamily.dyadic(u.grid, region)
    res = _vector_sup(u, lambda v: _mean_oscillation_sup(v, region, balls, balls.radii))
    return res if full_output else res.value


def vmo_modulus(u: GridFunction, R: float, region: Region | None = None, balls: BallFamily | None = None) -> float:
    """``eta_u(R)``: the mean-oscillation sup restricted to radii ``<= R``."""
    balls = balls or BallFamily.dyadic(u.grid, region)
    radii = tuple(r for r in balls.radii if r <= R * (1 + 1e-12))
    if not radii:
        raise ValueError(f"no radius <= {R} in the ball family")
    return _vector_sup(u, lambda v: _mean_oscillation_sup(v, region, balls, radii)).value


def vmo_profile(u: GridFunction, region: Region | None = None, balls: BallFamily | None = None) -> list[tuple[float, float]]:
    """``[(R, eta_u(R))]`` for every radius of the family."""
    balls = balls or BallFamily.dyadic(u.grid, region)
    res = _vector_sup(u, lambda v: _mean_oscillation_sup(v, region, balls, balls.radii))
    eta = np.maximum.accumulate(np.array(res.profile))
    return list(zip(balls.radii, eta.tolist()))


def campanato_seminorm(
    u: GridFunction,
    p: float,
    mu: float,
    region: Region | None = None,
    balls: BallFamily | None = None,
    full_output: bool = False,
):
    """``(max_{(c, r)} r**-mu * int_{B cap region} |u - u_B|^p)**(1/p)``."""
    n = u.grid.n
    if not 0 <= mu <= n + p:
        raise ValueError(f"Campanato exponent must lie in [0, n+p], got {mu}")
    balls = balls or BallFamily.dyadic(u.grid, region)

    def scalar(v):
        osc, _ = _oscillations(v, p, region, balls, balls.radii)
        scaled = osc * np.array(balls.radii)[:, None] ** (-mu)
        return _pick(scaled, balls, lambda x, _r: float(x) ** (1.0 / p))

    res = _vector_sup(u, scalar)
    return res if full_output else res.value


# --------------------------------------------------------------------------
# Hölder
# --------------------------------------------------------------------------

def _holder_scalar(pts, vals, sigma, pair_budget, rng) -> float:
    N = len(vals)
    best = 0.0
    if pair_budget:
        i = rng.integers(0, N, size=pair_budget)
        j = rng.integers(0, N, size=pair_budget)
        keep = i != j
        i, j = i[keep], j[keep]
        d = np.sqrt(np.sum((pts[i] - pts[j]) ** 2, axis=1))
        if len(d):
            best = float(np.max(np.abs(vals[i] - vals[j]) / d ** sigma))
        return best
    step = max(1, _CHUNK // N)
    for i0 in range(0, N - 1, step):
        i1 = min(N, i0 + step)
        d2 = np.sum((pts[i0:i1, None, :] - pts[None, i0:, :]) ** 2, axis=-1)
        jj = np.arange(i0, N)[None, :]
        ii = np.arange(i0, i1)[:, None]
        upper = jj > ii
        dv = np.abs(vals[i0:i1, None] - vals[None, i0:])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(upper, dv / np.sqrt(np.where(upper, d2, 1.0)) ** sigma, 0.0)
        best = max(best, float(q.max()))
    return best


def holder_seminorm(
    u: GridFunction,
    sigma: float,
    region: Region | None = None,
    pair_budget: int = 0,
    seed: int = 0,
) -> float:
    """``max |u(x) - u(x')| / |x - x'|**sigma`` over node pairs in the region.

    ``pair_budget == 0`` examines every pair (exact discrete seminorm);
    otherwise that many pairs are drawn with a seeded generator.
    """
    if not 0 < sigma <= 1:
        raise ValueError("Hölder exponent must lie in (0, 1]")
    sel = u.mask & u.grid.indicator(region)
    if sel.sum() < 2:
        raise ValueError("fewer than two valid nodes in the region")
    pts = u.grid.points[sel]
    rng = np.random.default_rng(seed)
    return float(sum(_holder_scalar(pts, u.values[sel][:, k], sigma, pair_budget, rng) for k in range(u.m)))
