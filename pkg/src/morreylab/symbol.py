"""Coefficient fields, principal symbols, characteristic determinants and cofactors.

The operator is ``L(x, D) u = sum_{|alpha| = 2b} A_alpha(x) D^alpha u`` with
``m x m`` matrices ``A_alpha``.  Its symbol ``sum A_alpha(x) xi^alpha`` is an
``m x m`` matrix homogeneous of degree ``2b`` in ``xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .grid import Grid, GridFunction, Region, finite_difference, multiindices_of_length

MIN_SPHERE_SAMPLES = 16


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """``alpha -> A_alpha`` for every ``|alpha| = 2b``.

    Each matrix is either constant, shape ``(m, m)``, or sampled on ``grid``,
    shape ``grid.shape + (m, m)``.  Missing multiindices are zero.
    """

    n: int
    m: int
    b: int
    entries: Mapping
    grid: Grid | None = None

    def __post_init__(self):
        full = {}
        for alpha in multiindices_of_length(self.n, 2 * self.b):
            A = np.asarray(self.entries.get(alpha, np.zeros((self.m, self.m))), dtype=float)
            if A.shape[-2:] != (self.m, self.m):
                raise ValueError(f"coefficient {alpha} has shape {A.shape}, expected (..., {self.m}, {self.m})")
            if A.ndim > 2:
                if self.grid is None or A.shape[:-2] != self.grid.shape:
                    raise ValueError(f"variable coefficient {alpha} does not match the grid")
            if not np.all(np.isfinite(A)):
                raise ValueError(f"coefficient {alpha} has non-finite entries")
            A = A.copy()
            A.setflags(write=False)
            full[alpha] = A
        extra = set(self.entries) - set(full)
        if extra:
            raise ValueError(f"multiindices {sorted(extra)} are not of length {2 * self.b}")
        object.__setattr__(self, "entries", full)

    @property
    def alphas(self) -> list:
        return list(self.entries)

    @property
    def is_constant(self) -> bool:
        return all(A.ndim == 2 for A in self.entries.values())

    @property
    def bound(self) -> float:
        """Sup-norm bound ``max |a^{jk}_alpha|``."""
        return max(float(np.abs(A).max()) for A in self.entries.values())

    def at(self, index=None) -> dict:
        """Frozen coefficients at a node index (``None`` for constant fields)."""
        out = {}
        for alpha, A in self.entries.items():
            if A.ndim == 2:
                out[alpha] = A
            elif index is None:
                raise ValueError("variable coefficients need a node index")
            else:
                out[alpha] = A[tuple(index)]
        return out

    def frozen(self, index=None) -> CoefficientField:
        return CoefficientField(self.n, self.m, self.b, self.at(index))

    def scaled(self, a) -> CoefficientField:
        """Multiply every coefficient by a scalar field ``a`` (GridFunction or constant)."""
        if isinstance(a, GridFunction):
            factor = a.scalar()[..., None, None]
            grid = a.grid
        else:
            factor, grid = float(a), self.grid
        return CoefficientField(self.n, self.m, self.b, {k: A * factor for k, A in self.entries.items()}, grid)

    def nonzero(self) -> dict:
        return {k: A for k, A in self.entries.items() if np.any(A != 0)}


# --------------------------------------------------------------------------
# Standard operators
# --------------------------------------------------------------------------

def polyharmonic(n: int, b: int = 1, m: int = 1) -> CoefficientField:
    """``Delta^b`` acting diagonally on ``m`` components."""
    entries = {}
    for alpha in multiindices_of_length(n, 2 * b):
        if all(a % 2 == 0 for a in alpha):
            c = math.factorial(b) / math.prod(math.factorial(a // 2) for a in alpha)
            entries[alpha] = c * np.eye(m)
    return CoefficientField(n, m, b, entries)


def laplacian(n: int, m: int = 1) -> CoefficientField:
    return polyharmonic(n, 1, m)


def second_order(Q) -> CoefficientField:
    """Scalar operator ``sum_ij Q_ij D_i D_j`` for a symmetric matrix ``Q``."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if not np.allclose(Q, Q.T):
        raise ValueError("Q must be symmetric")
    entries = {}
    for i in range(n):
        for j in range(i, n):
            alpha = [0] * n
            alpha[i] += 1
            alpha[j] += 1
            entries[tuple(alpha)] = np.array([[Q[i, i] if i == j else 2 * Q[i, j]]])
    return CoefficientField(n, 1, 1, entries)


def wave(n: int) -> CoefficientField:
    """``D_1^2 - sum_{i>1} D_i^2`` (not elliptic)."""
    Q = -np.eye(n)
    Q[0, 0] = 1.0
    return second_order(Q)


def lame(n: int, mu: float = 1.0, lam: float = 1.0) -> CoefficientField:
    """Lamé system ``mu Delta u + (lam + mu) grad div u`` with ``m = n``."""
    entries = {}
    for alpha in multiindices_of_length(n, 2):
        A = np.zeros((n, n))
        idx = [i for i, a in enumerate(alpha) for _ in range(a)]
        i, j = idx
        if i == j:
            A += mu * np.eye(n)
            A[i, i] += lam + mu
        else:
            A[i, j] += lam + mu
            A[j, i] += lam + mu
        entries[alpha] = A
    return CoefficientField(n, n, 1, entries)


# --------------------------------------------------------------------------
# Symbol algebra
# --------------------------------------------------------------------------

def monomial(xi, alpha) -> np.ndarray:
    """``xi^alpha`` for ``xi`` of shape ``(..., n)``; ``0**0 == 1``."""
    xi = np.asarray(xi, dtype=float)
    out = np.ones(xi.shape[:-1])
    for i, a in enumerate(alpha):
        if a:
            out = out * xi[..., i] ** a
    return out


def symbol_at(A: CoefficientField, x, xi) -> np.ndarray:
    """Symbol matrix ``sum_alpha A_alpha(x) xi^alpha``; shape ``xi.shape[:-1] + (m, m)``."""
    xi = np.asarray(xi, dtype=float)
    coeffs = A.at(x)
    out = np.zeros(xi.shape[:-1] + (A.m, A.m))
    for alpha, M in coeffs.items():
        out = out + monomial(xi, alpha)[..., None, None] * M
    return out


def det(S: np.ndarray) -> np.ndarray:
    """Determinant over the trailing two axes; explicit expansion for ``m <= 3``, LU otherwise."""
    S = np.asarray(S, dtype=float)
    m = S.shape[-1]
    if m == 1:
        return S[..., 0, 0].copy()
    if m == 2:
        return S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    if m == 3:
        return (
            S[..., 0, 0] * (S[..., 1, 1] * S[..., 2, 2] - S[..., 1, 2] * S[..., 2, 1])
            - S[..., 0, 1] * (S[..., 1, 0] * S[..., 2, 2] - S[..., 1, 2] * S[..., 2, 0])
            + S[..., 0, 2] * (S[..., 1, 0] * S[..., 2, 1] - S[..., 1, 1] * S[..., 2, 0])
        )
    return np.linalg.det(S)


def char_det(A: CoefficientField, x, xi) -> np.ndarray:
    return det(symbol_at(A, x, xi))


def cofactor_matrix(S: np.ndarray) -> np.ndarray:
    """Signed minors ``L_jk = (-1)**(j+k) det(S without row j, column k)``.

    With this convention ``sum_k S[i, k] L[j, k] = delta_ij det S``.
    """
    S = np.asarray(S, dtype=float)
    m = S.shape[-1]
    out = np.empty_like(S)
    if m == 1:
        out[...] = 1.0
        return out
    for j in range(m):
        for k in range(m):
            minor = np.delete(np.delete(S, j, axis=-2), k, axis=-1)
            out[..., j, k] = (-1) ** (j + k) * det(minor)
    return out


def cofactor_residual(S: np.ndarray) -> float:
    L = cofactor_matrix(S)
    D = det(S)
    m = S.shape[-1]
    lhs = np.einsum("...ik,...jk->...ij", S, L)
    rhs = D[..., None, None] * np.eye(m)
    rel = np.abs(lhs - rhs) / (np.abs(D)[..., None, None] + 1.0)
    return float(rel.max())


def verify_cofactor_identity(A: CoefficientField, x, xi) -> float:
    """Max relative residual of ``sum_k l^{ik} L_jk = delta_ij det`` at ``(x, xi)``."""
    return cofactor_residual(symbol_at(A, x, xi))


# --------------------------------------------------------------------------
# Ellipticity
# --------------------------------------------------------------------------

def sphere_points(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform points on the unit sphere of R^n.

    Uniform angles for ``n = 2``, a Fibonacci lattice for ``n = 3``, and
    seeded rejection sampling from the cube for ``n >= 4``.
    """
    if count < MIN_SPHERE_SAMPLES:
        raise ValueError(f"need at least {MIN_SPHERE_SAMPLES} sphere samples")
    k = np.arange(count)
    if n == 2:
        t = 2 * np.pi * k / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        z = 1 - (2 * k + 1) / count
        phi = k * np.pi * (3 - math.sqrt(5))
        rho = np.sqrt(1 - z * z)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < count:
        cand = rng.uniform(-1, 1, size=(2 * count, n))
        r = np.linalg.norm(cand, axis=1)
        keep = (r <= 1) & (r > 1e-3)
        pts.extend((cand[keep] / r[keep, None]).tolist())
    return np.array(pts[:count])


@dataclass
class EllipticityReport:
    delta: float
    elliptic: bool
    witness_x: tuple | None
    witness_xi: tuple
    samples: int


def ellipticity_constant(
    A: CoefficientField,
    region: Region | None = None,
    sphere_samples: int = 256,
    seed: int = 0,
) -> EllipticityReport:
    """Estimate ``delta = min det L(x, xi)`` over region nodes ``x`` and unit ``xi``.

    A non-positive ``delta`` flags a failure of ellipticity; the minimizing
    ``(x, xi)`` is reported as witness.
    """
    xi = sphere_points(A.n, sphere_samples, seed)
    if A.is_constant:
        vals = char_det(A, None, xi)
        i = int(np.argmin(vals))
        d = float(vals[i])
        return EllipticityReport(d, d > 0, None, tuple(xi[i]), sphere_samples)
    grid = A.grid
    nodes = np.argwhere(grid.indicator(region))
    best, where = math.inf, (None, None)
    step = max(1, 200_000 // (len(xi) * A.m * A.m))
    monos = {alpha: monomial(xi, alpha) for alpha in A.alphas}
    for i0 in range(0, len(nodes), step):
        chunk = nodes[i0 : i0 + step]
        S = np.zeros((len(chunk), len(xi), A.m, A.m))
        for alpha, M in A.entries.items():
            Mx = M[tuple(chunk.T)] if M.ndim > 2 else np.broadcast_to(M, (len(chunk), A.m, A.m))
            S += Mx[:, None] * monos[alpha][None, :, None, None]
        vals = det(S)
        flat = int(np.argmin(vals))
        if vals.flat[flat] < best:
            best = float(vals.flat[flat])
            ci, si = np.unravel_index(flat, vals.shape)
            where = (tuple(float(v) for v in grid.points[tuple(chunk[ci])]), tuple(xi[si]))
    return EllipticityReport(best, best > 0, where[0], where[1], sphere_samples)


# --------------------------------------------------------------------------
# Applying the operator
# --------------------------------------------------------------------------

def apply_operator(A: CoefficientField, u: GridFunction) -> GridFunction:
    """``sum_alpha A_alpha(x) D^alpha u`` with centered differences, on interior nodes."""
    if u.m != A.m:
        raise ValueError(f"operator acts on {A.m} components, u has {u.m}")
    if not A.is_constant and A.grid != u.grid:
        raise ValueError("coefficients and u live on different grids")
    total = np.zeros(u.values.shape)
    mask = u.mask.copy()
    for alpha, M in A.nonzero().items():
        D = finite_difference(u, alpha)
        total = total + np.einsum("...jk,...k->...j", M, D.values)
        mask &= D.mask
    return GridFunction(u.grid, total, mask)
