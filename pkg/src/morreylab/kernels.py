"""Closed-form fundamental solutions and the lattice potentials built from them.

Every supported kernel is a finite sum ``sum_i P_i(x) q(x)**t_i [log q(x)]``
with ``q(x) = x^T M x``; derivatives of any order stay in that class and are
generated exactly (:class:`QuadraticPowerForm`).  The families are

* ``laplace``: ``-|x|^{2-n} / ((n-2) omega_n)`` for n >= 3, ``log|x| / (2 pi)`` for n = 2;
* ``polyharmonic``: the fundamental solution of ``Delta^b`` for ``2b < n`` or odd ``n``;
* ``scaled_scalar``: ``sum Q_ij D_i D_j`` with ``Q`` symmetric positive definite,
  reduced to the Laplacian by ``x -> Q^{-1/2} x``.

Lattice sums ``sum_y K(x - y) f(y) h^n`` are discrete convolutions on the
grid.  ``method="direct"`` accumulates them source node by source node in
raster order; ``method="fft"`` evaluates the same discrete sum by a
zero-padded FFT (identical up to roundoff).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import roots_jacobi

from . import _poly
from .grid import Grid, GridFunction, Region, finite_difference
from .spaces import lp_norm
from .symbol import CoefficientField, apply_operator, laplacian, polyharmonic, second_order

DEFAULT_SPHERE_ORDER = 32


class UnsupportedKernel(ValueError):
    pass


class LogFamilyError(ValueError):
    """The operation needs a homogeneous kernel but the family is logarithmic."""


# --------------------------------------------------------------------------
# Sphere quadrature
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def sphere_quadrature(n: int, order: int = DEFAULT_SPHERE_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss rule on the unit sphere of R^n.

    The circle uses ``order`` equispaced midpoints; each additional polar
    coordinate ``t = y_1`` uses Gauss-Jacobi nodes for the weight
    ``(1 - t^2)^{(n-3)/2}``.  Exact for polynomials of degree below ``order``.
    """
    if n < 2:
        raise ValueError("sphere dimension must be at least 2")
    if n == 2:
        t = 2 * np.pi * (np.arange(order) + 0.5) / order
        pts = np.stack([np.cos(t), np.sin(t)], axis=-1)
        w = np.full(order, 2 * np.pi / order)
    else:
        a = (n - 3) / 2
        t, wt = roots_jacobi(order, a, a)
        sub, wsub = sphere_quadrature(n - 1, order)
        rho = np.sqrt(1 - t * t)
        pts = np.concatenate(
            [np.broadcast_to(t[:, None, None], (order, len(sub), 1)), rho[:, None, None] * sub[None]], axis=-1
        ).reshape(-1, n)
        w = (wt[:, None] * wsub[None, :]).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


# --------------------------------------------------------------------------
# Exact derivative algebra
# --------------------------------------------------------------------------

class QuadraticPowerForm:
    """``sum_i P_i(x) * q(x)**t_i * (log q(x) if log_i)`` with ``q = x^T M x``."""

    def __init__(self, n: int, M: np.ndarray, terms):
        self.n = n
        self.M = np.asarray(M, dtype=float)
        merged: dict = {}
        for P, t, lg in terms:
            key = (Fraction(t), bool(lg))
            merged[key] = _poly.add(merged.get(key, {}), P)
        self.terms = tuple((P, t, lg) for (t, lg), P in sorted(merged.items()) if P)
        self._dq = [_poly.add(*(_poly.var(n, l, 2 * self.M[i, l]) for l in range(n) if self.M[i, l])) for i in range(n)]
        self._cache: dict = {}

    @property
    def has_log(self) -> bool:
        return any(lg for _, _, lg in self.terms)

    def scaled(self, c: float) -> QuadraticPowerForm:
        return QuadraticPowerForm(self.n, self.M, [(_poly.scale(P, c), t, lg) for P, t, lg in self.terms])

    def __add__(self, other: QuadraticPowerForm) -> QuadraticPowerForm:
        return QuadraticPowerForm(self.n, self.M, self.terms + other.terms)

    def diff(self, i: int) -> QuadraticPowerForm:
        out = []
        for P, t, lg in self.terms:
            out.append((_poly.diff(P, i), t, lg))
            if t != 0:
                out.append((_poly.scale(_poly.mul(P, self._dq[i]), float(t)), t - 1, lg))
            if lg:
                out.append((_poly.mul(P, self._dq[i]), t - 1, False))
        return QuadraticPowerForm(self.n, self.M, out)

    def derivative(self, alpha) -> QuadraticPowerForm:
        alpha = tuple(alpha)
        if alpha in self._cache:
            return self._cache[alpha]
        form = self
        for i, a in enumerate(alpha):
            for _ in range(a):
                form = form.diff(i)
        self._cache[alpha] = form
        return form

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = np.einsum("...i,ij,...j->...", x, self.M, x)
        out = np.zeros(x.shape[:-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            logq = np.log(q) if self.has_log else None
            for P, t, lg in self.terms:
                term = _poly.evaluate(P, x)
                if t != 0:
                    term = term * q ** float(t)
                if lg:
                    term = term * logq
                out = out + term
        return out


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelField:
    """``D^alpha Gamma`` as an evaluable field."""

    form: QuadraticPowerForm
    alpha: tuple
    degree: float | None  # homogeneity degree, None if logarithmic

    def __call__(self, x) -> np.ndarray:
        return self.form(x)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Scalar fundamental solution (``m = 1``; acts diagonally on vectors)."""

    family: str
    n: int
    b: int
    form: QuadraticPowerForm
    Q: np.ndarray | None = None
    m: int = 1

    @property
    def is_log(self) -> bool:
        return self.form.has_log

    @property
    def degree(self) -> float:
        return 2 * self.b - self.n

    def __call__(self, x) -> np.ndarray:
        return self.form(x)

    def derivative(self, alpha) -> KernelField:
        return kernel_derivative(self, alpha)

    def operator(self) -> CoefficientField:
        """Constant-coefficient operator this kernel inverts."""
        if self.family == "scaled_scalar":
            return second_order(self.Q)
        return polyharmonic(self.n, self.b)

    def entry_forms(self, alpha, m: int = 1) -> list:
        f = self.form.derivative(alpha)
        return [[f if j == k else None for k in range(m)] for j in range(m)]

    def describe(self) -> dict:
        d = {"family": self.family, "n": self.n, "b": self.b, "log_family": self.is_log}
        if self.Q is not None:
            d["Q"] = np.asarray(self.Q).tolist()
        return d


def _laplace_form(n: int, M: np.ndarray, scale: float) -> QuadraticPowerForm:
    if n == 2:
        # log|y| = (1/2) log q
        return QuadraticPowerForm(n, M, [(_poly.const(n, scale / (4 * math.pi)), 0, True)])
    c = -scale / ((n - 2) * sphere_area(n))
    return QuadraticPowerForm(n, M, [(_poly.const(n, c), Fraction(2 - n, 2), False)])


def _polyharmonic_form(n: int, b: int) -> QuadraticPowerForm:
    if b == 1:
        return _laplace_form(n, np.eye(n), 1.0)
    if n % 2 == 0 and 2 * b >= n:
        raise UnsupportedKernel(f"polyharmonic b={b} in even n={n} needs a logarithmic kernel (not provided)")
    c = -1.0 / ((n - 2) * sphere_area(n))
    for k in range(1, b):
        # Delta |x|^{2k+2-n} = (2k+2-n)(2k) |x|^{2k-n}
        c /= (2 * k + 2 - n) * (2 * k)
    return QuadraticPowerForm(n, np.eye(n), [(_poly.const(n, c), Fraction(2 * b - n, 2), False)])


def fundamental_solution(family: str, n: int, b: int = 1, Q=None) -> Kernel:
    """Closed-form ``Gamma`` with ``L Gamma = delta``; see the module docstring for families."""
    if n < 2:
        raise UnsupportedKernel("n must be at least 2")
    if family == "laplace":
        if b != 1:
            raise UnsupportedKernel("laplace family has b = 1; use polyharmonic")
        return Kernel("laplace", n, 1, _laplace_form(n, np.eye(n), 1.0))
    if family == "polyharmonic":
        if b < 1:
            raise UnsupportedKernel("b must be >= 1")
        return Kernel("polyharmonic", n, b, _polyharmonic_form(n, b))
    if family == "scaled_scalar":
        if b != 1 or Q is None:
            raise UnsupportedKernel("scaled_scalar needs b = 1 and a matrix Q")
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (n, n) or not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
            raise UnsupportedKernel("Q must be a symmetric positive definite n x n matrix")
        form = _laplace_form(n, np.linalg.inv(Q), 1.0 / math.sqrt(np.linalg.det(Q)))
        return Kernel("scaled_scalar", n, 1, form, Q=Q)
    raise UnsupportedKernel(f"unknown kernel family {family!r}")


def kernel_derivative(K, alpha) -> KernelField:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != K.n:
        raise ValueError("multiindex dimension mismatch")
    if sum(alpha) > 2 * K.b:
        raise ValueError(f"|alpha| = {sum(alpha)} exceeds 2b = {2 * K.b}")
    form = K.form.derivative(alpha) if isinstance(K, Kernel) else None
    if form is None:
        raise TypeError("kernel_derivative expects a scalar Kernel")
    degree = None if form.has_log else 2 * K.b - K.n - sum(alpha)
    return KernelField(form, alpha, degree)


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """``Gamma^{jk} = L_kj(D) Gamma~`` for a constant system with ``det L(xi) = c |xi|^{2bm}``."""

    n: int
    m: int
    b: int
    entries: tuple  # m x m QuadraticPowerForm
    A: CoefficientField
    det_constant: float

    is_log = False

    @property
    def family(self) -> str:
        return "cofactor"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.m, self.m))
        for j, k in itertools.product(range(self.m), repeat=2):
            out[..., j, k] = self.entries[j][k](x)
        return out

    def operator(self) -> CoefficientField:
        return self.A

    def entry_forms(self, alpha, m: int | None = None) -> list:
        if sum(alpha) > 2 * self.b:
            raise ValueError(f"|alpha| exceeds 2b = {2 * self.b}")
        return [[self.entries[j][k].derivative(alpha) for k in range(self.m)] for j in range(self.m)]

    def describe(self) -> dict:
        return {"family": "cofactor", "n": self.n, "m": self.m, "b": self.b, "det_constant": self.det_constant}


def symbol_polynomials(A: CoefficientField) -> list:
    """``l^{jk}(xi)`` as polynomials."""
    out = []
    for j in range(A.m):
        row = []
        for k in range(A.m):
            row.append(_poly.add(*({alpha: float(M[j, k])} for alpha, M in A.at(None).items() if M[j, k] != 0)))
        out.append(row)
    return out


def fundamental_matrix(A: CoefficientField) -> FundamentalMatrix:
    """Fundamental matrix of a constant system through the cofactor construction.

    Supported when the characteristic determinant is ``c |xi|^{2bm}`` with
    ``c > 0`` (diagonal Laplacians, Lamé systems, ...); then
    ``Gamma~ = (polyharmonic of order bm) / c``.
    """
    if not A.is_constant:
        raise UnsupportedKernel("fundamental_matrix needs constant (frozen) coefficients")
    n, m, b = A.n, A.m, A.b
    ell = symbol_polynomials(A)
    L = _poly.determinant(ell)
    xi2 = {tuple(2 if j == i else 0 for j in range(n)): 1.0 for i in range(n)}
    iso = _poly.power(xi2, b * m, n)
    lead = tuple(2 * b * m if j == 0 else 0 for j in range(n))
    c = L.get(lead, 0.0)
    if c <= 0:
        raise UnsupportedKernel("characteristic determinant is not a positive multiple of |xi|^{2bm}")
    resid = _poly.max_abs_coeff(_poly.add(L, _poly.scale(iso, -c)))
    if resid > 1e-10 * _poly.max_abs_coeff(L):
        raise UnsupportedKernel("characteristic determinant is not isotropic; general systems are out of scope")
    base = _polyharmonic_form(n, b * m).scaled(1.0 / c)
    cof = _poly.cofactors(ell, n)
    entries = []
    for j in range(m):
        row = []
        for k in range(m):
            terms = []
            for beta, coeff in sorted(cof[k][j].items()):
                terms.extend((_poly.scale(P, coeff), t, lg) for P, t, lg in base.derivative(beta).terms)
            row.append(QuadraticPowerForm(n, np.eye(n), terms))
        entries.append(tuple(row))
    return FundamentalMatrix(n, m, b, tuple(entries), A, c)


# --------------------------------------------------------------------------
# Kernel checks
# --------------------------------------------------------------------------

@dataclass
class CZKernelReport:
    homogeneity_residual: float
    mean_zero_residual: float
    sup_on_sphere: float
    sphere_order: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def homogeneity_residual(field: KernelField, points: np.ndarray, factors=(2.0, 0.5)) -> float:
    """``max |K(t x) - t^d K(x)| / max |K(x)|`` over the points and factors."""
    if field.degree is None:
        raise LogFamilyError("logarithmic kernels are not homogeneous")
    base = field(points)
    scale = float(np.abs(base).max()) or 1.0
    worst = 0.0
    for t in factors:
        worst = max(worst, float(np.abs(field(t * points) - t ** field.degree * base).max()) / scale)
    return worst


def cz_checks(K: Kernel, alpha, sphere_samples: int = DEFAULT_SPHERE_ORDER) -> CZKernelReport:
    """Homogeneity of degree ``-n`` and vanishing sphere mean of ``D^alpha Gamma``, ``|alpha| = 2b``."""
    if K.is_log:
        raise LogFamilyError("cz_checks is not defined for the logarithmic family")
    if sum(alpha) != 2 * K.b:
        raise ValueError("Calderón-Zygmund checks need |alpha| = 2b")
    field = kernel_derivative(K, alpha)
    pts, w = sphere_quadrature(K.n, sphere_samples)
    vals = field(pts)
    return CZKernelReport(
        homogeneity_residual=homogeneity_residual(field, pts),
        mean_zero_residual=abs(float(np.dot(w, vals))),
        sup_on_sphere=float(np.abs(vals).max()),
        sphere_order=sphere_samples,
    )


def surface_term(K, alpha, s_index: int, sphere_samples: int = DEFAULT_SPHERE_ORDER) -> np.ndarray:
    """``int_{S^{n-1}} D^{alpha - e_s} Gamma(y) y_s dsigma`` as an ``m x m`` matrix.

    ``s_index`` is a 0-based axis with ``alpha[s_index] >= 1``.
    """
    alpha = tuple(alpha)
    if alpha[s_index] < 1:
        raise ValueError(f"alpha[{s_index}] must be >= 1")
    beta = tuple(a - (i == s_index) for i, a in enumerate(alpha))
    pts, w = sphere_quadrature(K.n, sphere_samples)
    forms = K.entry_forms(beta, getattr(K, "m", 1))
    m = len(forms)
    out = np.zeros((m, m))
    for j, k in itertools.product(range(m), repeat=2):
        if forms[j][k] is not None:
            out[j, k] = float(np.dot(w, forms[j][k](pts) * pts[:, s_index]))
    return out


# --------------------------------------------------------------------------
# Self-cell rules
# --------------------------------------------------------------------------

def _gauss_cube(n: int, center: np.ndarray, side: float, g: int):
    x, w = np.polynomial.legendre.leggauss(g)
    x = 0.5 * side * x
    w = 0.5 * side * w
    pts = np.stack(np.meshgrid(*([x] * n), indexing="ij"), -1).reshape(-1, n) + center
    ww = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), -1).reshape(-1, n), axis=1)
    return pts, ww


def _outer_shell_integral(form: QuadraticPowerForm, n: int) -> float:
    """Integral over the unit cube minus its central third-cube (composite Gauss)."""
    total = 0.0
    for k in itertools.product((-1, 0, 1), repeat=n):
        if not any(k):
            continue
        c = np.array(k) / 3.0
        for sub in itertools.product((-1, 0, 1), repeat=n):
            pts, w = _gauss_cube(n, c + np.array(sub) / 9.0, 1 / 9.0, 4)
            total += float(np.dot(w, form(pts)))
    return total


def self_cell_integral(form: QuadraticPowerForm, degree: float | None, h: float) -> float:
    """``int_{[-h/2, h/2]^n} form`` for an integrable homogeneous or log kernel.

    Uses self-similarity: the central third-cube contributes ``3^{-(n+d)}``
    of the whole, so only the outer shell is integrated numerically.
    """
    n = form.n
    S = _outer_shell_integral(form, n)
    if degree is None:
        # form = c log q + (homogeneous part of degree 0 is absent by construction)
        if len(form.terms) != 1 or form.terms[0][1] != 0 or not form.terms[0][2]:
            raise UnsupportedKernel("self-cell rule supports pure c*log(q) logarithmic kernels")
        c = form.terms[0][0].get((0,) * n, 0.0)
        J = (S - 3.0 ** (-n) * 2 * c * math.log(3.0)) / (1 - 3.0 ** (-n))
        return h ** n * (2 * c * math.log(h) + J)
    if degree <= -n:
        raise ValueError("kernel is not integrable at the origin")
    I = S / (1 - 3.0 ** (-(n + degree)))
    return h ** (n + degree) * I


def cube_pv_constant(form: QuadraticPowerForm, order: int = 24) -> float:
    """Spherical principal value of ``int_{[-1,1]^n} K`` for a mean-zero kernel of degree ``-n``.

    In polar form this is ``int_S K(w) log(1/max|w_i|) dsigma``; projecting
    the sphere radially onto the cube faces turns it into
    ``sum_faces int_face K(z) log|z| dz``, a smooth integrand handled by
    tensor Gauss-Legendre.
    """
    n = form.n
    t, w = np.polynomial.legendre.leggauss(order)
    T = np.stack(np.meshgrid(*([t] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
    W = np.prod(np.stack(np.meshgrid(*([w] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1), axis=1)
    total = 0.0
    for axis in range(n):
        for side in (-1.0, 1.0):
            Z = np.insert(T, axis, side, axis=1)
            total += float(np.dot(W, form(Z) * 0.5 * np.log(np.sum(Z * Z, axis=1))))
    return total


_LATTICE_SIZES = {2: (128, 256), 3: (24, 48), 4: (10, 20)}


def lattice_pv_constant(form: QuadraticPowerForm) -> float:
    """Correction that turns the cell-omitting lattice sum into the spherical principal value.

    For a degree ``-n`` kernel the sum ``sum_{k != 0} K(k)`` over lattice
    offsets differs from the principal-value integral by a fixed constant
    (midpoint errors of the near cells do not shrink with ``h``).  It is
    ``c_cube - sum_{0 < |k|_inf <= N} K(k)`` in the limit ``N -> inf``; the
    truncation error is ``O(N^-2)`` and is removed by one Richardson step.
    Zero for kernels with cubic symmetry such as ``D_i^2`` of the Laplace kernel.
    """
    cached = form._cache.get("lattice_pv")
    if cached is not None:
        return cached
    n = form.n
    c_cube = cube_pv_constant(form)
    vals = []
    for N in _LATTICE_SIZES.get(n, (5, 10)):
        ax = np.arange(-N, N + 1, dtype=float)
        X = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1)
        T = form(X)
        T[(N,) * n] = 0.0
        # cells of the offsets tile the cube of half-width N + 1/2; c_cube is scale free
        vals.append(c_cube - float(T.sum()))
    value = vals[1] + (vals[1] - vals[0]) / 3.0
    form._cache["lattice_pv"] = value
    return value


# --------------------------------------------------------------------------
# Lattice operators
# --------------------------------------------------------------------------

def _bbox(mask: np.ndarray):
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return None
    return idx.min(axis=0), idx.max(axis=0)


class _LatticeOperator:
    """``x -> sum_y K(x - y) g(y) h^n`` from a source box to an evaluation box."""

    def __init__(self, forms, degree, grid: Grid, src_box, eval_box, self_cell: str, method: str):
        if method not in ("fft", "direct"):
            raise ValueError(f"unknown summation method {method!r}")
        self.forms, self.grid, self.method = forms, grid, method
        self.src_box, self.eval_box = src_box, eval_box
        s_lo, s_hi = src_box
        e_lo, e_hi = eval_box
        lo, hi = e_lo - s_hi, e_hi - s_lo
        h = grid.h
        axes = [np.arange(a, b + 1) * h for a, b in zip(lo, hi)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        zero = tuple(-lo)
        has_zero = all(0 <= z < s for z, s in zip(zero, X.shape[:-1]))
        self.tables = {}
        for j, row in enumerate(forms):
            for k, form in enumerate(row):
                if form is None:
                    continue
                T = form(X)
                if has_zero:
                    T[zero] = self._self_value(form, degree, h, self_cell)
                self.tables[j, k] = T
        self.m_out = len(forms)

    @staticmethod
    def _self_value(form, degree, h, rule) -> float:
        n = form.n
        if rule == "auto":
            rule = "omit" if degree is not None and degree <= -n else "subcell"
        if rule == "omit":
            return 0.0
        if rule == "subcell":
            return self_cell_integral(form, degree, h) / h ** n
        if rule == "lattice":
            if degree is None or degree != -n:
                raise ValueError("the lattice rule is for degree -n kernels")
            return lattice_pv_constant(form) / h ** n
        raise ValueError(f"unknown self-cell rule {rule!r}")

    def apply(self, G: np.ndarray) -> np.ndarray:
        """``G`` has shape ``grid.shape + (m_in,)``; result on the full grid."""
        s_lo, s_hi = self.src_box
        e_lo, e_hi = self.eval_box
        src = tuple(slice(a, b + 1) for a, b in zip(s_lo, s_hi))
        dst = tuple(slice(a, b + 1) for a, b in zip(e_lo, e_hi))
        eshape = tuple(e_hi - e_lo + 1)
        fshape = tuple(s_hi - s_lo + 1)
        out = np.zeros(self.grid.shape + (self.m_out,))
        for (j, k), T in sorted(self.tables.items()):
            g = G[src + (k,)]
            if not np.any(g):
                continue
            if self.method == "fft":
                acc = fftconvolve(T, g, mode="valid")
            else:
                acc = np.zeros(eshape)
                for idx in zip(*np.nonzero(g)):
                    sl = tuple(slice(fs - 1 - i, fs - 1 - i + es) for fs, i, es in zip(fshape, idx, eshape))
                    acc += g[idx] * T[sl]
            out[dst + (j,)] += acc * self.grid.cell_volume
        return out


def _forms_for(K, alpha, m):
    forms = K.entry_forms(alpha, m) if isinstance(K, Kernel) else K.entry_forms(alpha)
    if len(forms) != m:
        raise ValueError(f"kernel acts on {len(forms)} components, function has {m}")
    return forms


def _degree(K, alpha):
    if K.is_log and sum(alpha) == 0:
        return None
    return 2 * K.b - K.n - sum(alpha)


def _eval_mask(grid: Grid, eval_region: Region | None) -> np.ndarray:
    mask = grid.indicator(eval_region)
    if not mask.any():
        raise ValueError("evaluation region contains no nodes")
    return mask


def _source(f: GridFunction) -> np.ndarray:
    return f.values * f.mask[..., None]


def _require_compact_support(f: GridFunction) -> None:
    F = _source(f)
    boundary = np.zeros(f.grid.shape, dtype=bool)
    for axis in range(f.grid.n):
        sl = [slice(None)] * f.grid.n
        sl[axis] = 0
        boundary[tuple(sl)] = True
        sl[axis] = -1
        boundary[tuple(sl)] = True
    if np.any(F[boundary] != 0):
        raise ValueError("source is not compactly supported inside the grid (nonzero on the boundary layer)")


def _apply(K, alpha, f: GridFunction, eval_region, method, self_cell, extra_sources=()):
    _require_compact_support(f)
    forms = _forms_for(K, alpha, f.m)
    src_mask = np.any(_source(f) != 0, axis=-1)
    for g in extra_sources:
        src_mask |= np.any(g != 0, axis=-1)
    emask = _eval_mask(f.grid, eval_region)
    sbox, ebox = _bbox(src_mask), _bbox(emask)
    if sbox is None:
        return None, emask
    op = _LatticeOperator(forms, _degree(K, alpha), f.grid, sbox, ebox, self_cell, method)
    return op, emask


def newtonian_potential(
    K,
    f: GridFunction,
    eval_region: Region | None = None,
    method: str = "fft",
    self_cell: str = "subcell",
) -> GridFunction:
    """``v(x) = sum_y Gamma(x - y) f(y) h^n``; the singular cell uses the sub-cell rule."""
    zero = tuple(0 for _ in range(f.grid.n))
    op, emask = _apply(K, zero, f, eval_region, method, self_cell)
    if op is None:
        return GridFunction(f.grid, np.zeros(f.values.shape), emask)
    return GridFunction(f.grid, op.apply(_source(f)), emask)


def singular_operator(
    K,
    alpha,
    f: GridFunction,
    eval_region: Region | None = None,
    method: str = "fft",
    self_cell: str = "omit",
) -> GridFunction:
    """Principal-value sum ``sum_{y != x} D^alpha Gamma(x - y) f(y) h^n`` for ``|alpha| = 2b``.

    ``self_cell="lattice"`` adds ``lattice_pv_constant * f(x)``, which makes
    the sum consistent with the spherical principal value for kernels
    without cubic symmetry.
    """
    alpha = tuple(alpha)
    if sum(alpha) != 2 * K.b:
        raise ValueError("singular_operator needs |alpha| = 2b")
    op, emask = _apply(K, alpha, f, eval_region, method, self_cell)
    if op is None:
        return GridFunction(f.grid, np.zeros(f.values.shape), emask)
    return GridFunction(f.grid, op.apply(_source(f)), emask)


def commutator(
    K,
    alpha,
    a: GridFunction,
    f: GridFunction,
    eval_region: Region | None = None,
    method: str = "fft",
) -> GridFunction:
    """``sum_{y != x} D^alpha Gamma(x - y) (a(x) - a(y)) f(y) h^n`` for scalar ``a``.

    ``a`` is shifted by a reference value first (the commutator does not
    see constants), so a constant ``a`` gives exactly zero.
    """
    alpha = tuple(alpha)
    if sum(alpha) != 2 * K.b:
        raise ValueError("commutator needs |alpha| = 2b")
    if a.grid != f.grid:
        raise ValueError("a and f live on different grids")
    A = a.scalar()
    ref = A[tuple(np.argwhere(a.mask)[0])] if a.mask.any() else 0.0
    Ac = np.where(a.mask, A - ref, 0.0)
    F = _source(f)
    aF = Ac[..., None] * F
    op, emask = _apply(K, alpha, f, eval_region, method, "omit")
    if op is None:
        return GridFunction(f.grid, np.zeros(f.values.shape), emask)
    out = Ac[..., None] * op.apply(F) - op.apply(aF)
    return GridFunction(f.grid, out, emask & a.mask)


# --------------------------------------------------------------------------
# Representation formula
# --------------------------------------------------------------------------

def frozen_scale(A: CoefficientField, K) -> np.ndarray | float:
    """``c(x)`` with ``A(x) = c(x) * A_K``, where ``A_K`` is the operator inverted by ``K``."""
    AK = K.operator()
    if (AK.n, AK.m, AK.b) != (A.n, A.m, A.b):
        raise ValueError("kernel and coefficient field have different (n, m, b)")
    ref = AK.at(None)
    norm2 = sum(float(np.sum(M * M)) for M in ref.values())
    num = sum(np.sum(A.entries[al] * ref[al], axis=(-2, -1)) for al in ref)
    c = num / norm2
    c_arr = np.asarray(c)
    resid = max(
        float(np.abs(A.entries[al] - c_arr[..., None, None] * ref[al]).max()) for al in A.entries
    )
    if resid > 1e-9 * max(1.0, A.bound):
        raise ValueError("coefficient field is not a scalar multiple of the kernel's operator")
    if np.any(c_arr <= 0):
        raise ValueError("frozen scale must be positive")
    return c


@dataclass
class RepresentationResult:
    residual: float
    lhs_norm: float
    h: float
    terms: dict


def representation_terms(
    v: GridFunction,
    A: CoefficientField,
    K,
    alpha,
    eval_region: Region | None = None,
    p: float = 2.0,
    method: str = "fft",
    s_index: int | None = None,
    sphere_samples: int = DEFAULT_SPHERE_ORDER,
    self_cell: str = "lattice",
) -> RepresentationResult:
    """Compare ``D^alpha v`` with singular part + commutators + surface term.

    With the frozen kernel ``Gamma(x; .) = K / c(x)``:
    ``D^alpha v = (K_alpha(Lv) + sum_{alpha'} C_alpha[A_alpha', D^alpha' v] + S_alpha Lv) / c(x)``.
    The surface term uses the first axis ``s`` with ``alpha_s >= 1`` unless
    ``s_index`` is given (its value does not depend on the choice).  The
    surface term belongs to the spherical principal value, so by default the
    lattice sum carries the principal-value correction
    (``self_cell="lattice"``); plain omission is only consistent for kernels
    with cubic symmetry.
    """
    alpha = tuple(alpha)
    if sum(alpha) != 2 * A.b:
        raise ValueError("representation formula is for |alpha| = 2b")
    c = frozen_scale(A, K)
    c_arr = np.broadcast_to(np.asarray(c, dtype=float), v.grid.shape)
    Lv = apply_operator(A, v)
    Lf = GridFunction(v.grid, Lv.values, Lv.mask)
    lhs = finite_difference(v, alpha)
    singular = singular_operator(K, alpha, Lf, eval_region, method, self_cell)
    total = singular.values.copy()
    valid = lhs.mask & Lv.mask & singular.mask
    comm_total = np.zeros_like(total)
    for ap, M in A.entries.items():
        if M.ndim == 2:
            continue  # constant coefficient: commutator vanishes identically
        Dv = finite_difference(v, ap)
        Dv = GridFunction(v.grid, Dv.values, Dv.mask)
        forms = _forms_for(K, alpha, v.m)
        m = v.m
        for l, k in itertools.product(range(m), repeat=2):
            a_lk = GridFunction(v.grid, M[..., l, k])
            if not np.any(a_lk.values != a_lk.values.flat[0]):
                continue
            g = GridFunction(v.grid, Dv.values[..., k : k + 1], Dv.mask)
            for j in range(m):
                if forms[j][l] is None:
                    continue
                sub = _SingleEntry(K, j, l, m)
                cm = commutator(sub, alpha, a_lk, g, eval_region, method)
                comm_total[..., j] += cm.values[..., 0]
                valid &= cm.mask
    s = s_index if s_index is not None else next(i for i, a in enumerate(alpha) if a >= 1)
    S = surface_term(K, alpha, s, sphere_samples)
    if S.shape[0] == 1 and v.m > 1:
        S = S[0, 0] * np.eye(v.m)
    surf = np.einsum("jk,...k->...j", S, Lv.values)
    rhs = (total + comm_total + surf) / c_arr[..., None]
    diff = GridFunction(v.grid, lhs.values - rhs, valid)
    ref = GridFunction(v.grid, lhs.values, valid)
    num = lp_norm(diff, p, eval_region)
    den = lp_norm(ref, p, eval_region)
    return RepresentationResult(
        residual=num / den if den > 0 else num,
        lhs_norm=den,
        h=v.grid.h,
        terms={"singular": singular, "commutator": comm_total, "surface": S, "lhs": lhs},
    )


class _SingleEntry:
    """View of one ``(j, l)`` entry of a kernel as a scalar kernel."""

    def __init__(self, K, j, l, m):
        self.K, self.j, self.l, self.m = K, j, l, m
        self.n, self.b, self.is_log = K.n, K.b, K.is_log

    def entry_forms(self, alpha, m=None):
        forms = _forms_for(self.K, alpha, self.m)
        return [[forms[self.j][self.l]]]


def representation_check(v: GridFunction, A: CoefficientField, K, alpha, **kwargs) -> float:
    """Relative L^p residual of the representation formula (see :func:`representation_terms`)."""
    if not np.any(v.values):
        return 0.0
    return representation_terms(v, A, K, alpha, **kwargs).residual
