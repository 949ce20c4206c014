"""Manufactured-solution experiments for interior a-priori estimates.

Nothing is solved: each experiment fixes an operator and a catalog solution
``u`` and computes ``f = L u`` by finite differences, then measures both
sides of an estimate with the estimators of :mod:`morreylab.spaces`.

Every experiment defaults to the nested radii ``(r0, r0/2, r0/4)``.
Suites (:func:`run_suite`) evaluate independent (experiment, radius) cells,
optionally on a thread pool, and always merge results in sorted order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc

from . import catalog
from .classifier import ProblemParams, classify
from .grid import Grid, GridFunction, Region, finite_difference, multiindices_of_length
from .kernels import commutator, fundamental_solution
from .spaces import BallFamily, campanato_seminorm, holder_seminorm, morrey_norm, vmo_modulus
from .symbol import CoefficientField, apply_operator, polyharmonic

__all__ = [
    "Experiment",
    "apply_operator",
    "cutoff",
    "cutoff_derivative_report",
    "caccioppoli_check",
    "caccioppoli_table",
    "theta_seminorms",
    "interpolation_check",
    "commutator_smallness_scan",
    "regularity_experiment",
    "run_suite",
    "SUITES",
]

DEFAULT_THETAS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def theta_prime(theta: float) -> float:
    return theta * (3 - theta) / 2


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

def operator_by_name(name: str, n: int) -> CoefficientField:
    if name == "laplace":
        return polyharmonic(n, 1)
    if name == "bilaplace":
        return polyharmonic(n, 2)
    raise ValueError(f"unknown operator {name!r}; expected 'laplace' or 'bilaplace'")


@dataclass(frozen=True)
class Experiment:
    """Operator + manufactured solution + region nest + space parameters.

    The outer region is the cube of half-width ``half_width`` around the
    origin (with grid spacing ``h``); balls ``B_r`` are centered at ``center``.
    """

    name: str
    operator: str
    n: int
    solution: dict
    h: float
    half_width: float = 1.0
    p: float = 2.0
    lam: float = 1.0
    r0: float = 0.8
    center: tuple | None = None
    theta: float = 0.5
    thetas: tuple = DEFAULT_THETAS
    exclude: tuple = ()

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.r0 > self.half_width:
            raise ValueError("radius schedule does not fit inside the outer region")

    @property
    def b(self) -> int:
        return {"laplace": 1, "bilaplace": 2}[self.operator]

    @property
    def theta_prime(self) -> float:
        return theta_prime(self.theta)

    @property
    def radii(self) -> tuple:
        return (self.r0, self.r0 / 2, self.r0 / 4)

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(self.n) if self.center is None else np.asarray(self.center, dtype=float)

    def grid(self) -> Grid:
        return Grid(self.h, Region.cube(self.n, self.half_width))

    def refined(self) -> Experiment:
        return replace(self, h=self.h / 2)

    def A(self) -> CoefficientField:
        return operator_by_name(self.operator, self.n)

    def u(self, grid: Grid | None = None) -> GridFunction:
        return catalog.sample(self.solution, grid or self.grid(), exclude=self.exclude)

    def ball(self, r: float) -> Region:
        return Region.ball(self.origin, r)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["center"] = None if self.center is None else list(self.center)
        d["thetas"] = list(self.thetas)
        d["exclude"] = [list(e) for e in self.exclude]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Experiment:
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        if "thetas" in d:
            d["thetas"] = tuple(d["thetas"])
        if "exclude" in d:
            d["exclude"] = tuple(tuple(e) for e in d["exclude"])
        return cls(**d)


def _all_derivatives(u: GridFunction, order: int) -> GridFunction:
    """Stack every ``D^alpha u`` with ``|alpha| = order`` as components."""
    if order == 0:
        return u
    parts = [finite_difference(u, a) for a in multiindices_of_length(u.grid.n, order)]
    values = np.concatenate([q.values for q in parts], axis=-1)
    mask = np.logical_and.reduce([q.mask for q in parts])
    return GridFunction(u.grid, values, mask)


def _morrey_on(u: GridFunction, p: float, lam: float, region: Region) -> float:
    return morrey_norm(u, p, lam, region, BallFamily.dyadic(u.grid, region))


# --------------------------------------------------------------------------
# Cut-off
# --------------------------------------------------------------------------

def _profile_order(b: int) -> int:
    return 2 * b


def cutoff(grid: Grid, center, r: float, theta: float, b: int = 1) -> GridFunction:
    """Radial cut-off: 1 on ``B_{theta r}``, 0 outside ``B_{theta' r}``.

    The transition is the smoothstep polynomial of degree ``4b + 1`` (a
    regularized incomplete beta function), so ``phi`` is ``C^{2b}``.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    center = np.asarray(center, dtype=float)
    outer = theta_prime(theta) * r
    if not grid.region.contains(np.array([center - outer, center + outer])).all():
        raise ValueError("theta' r exceeds the grid")
    k = _profile_order(b)
    rho = np.sqrt(np.sum((grid.points - center) ** 2, axis=-1))
    t = np.clip((outer - rho) / (outer - theta * r), 0.0, 1.0)
    return GridFunction(grid, betainc(k + 1, k + 1, t))


def cutoff_derivative_report(grid: Grid, center, r: float, theta: float, b: int = 1, orders=(1,)) -> list[dict]:
    """Measured ``max |D^s phi|`` against ``[theta (1-theta) r]^{-s}``.

    For ``s = 1`` the spline constant is explicit: the transition width is
    ``theta (1-theta) r / 2`` and the profile slope peaks at ``t = 1/2``.
    """
    phi = cutoff(grid, center, r, theta, b)
    k = _profile_order(b)
    envelope_base = theta * (1 - theta) * r
    rows = []
    for s in orders:
        D = _all_derivatives(phi, s)
        measured = float(np.abs(D.values[D.mask]).max()) if D.mask.any() else 0.0
        env = envelope_base ** (-s)
        row = {"s": s, "measured": measured, "envelope": env, "ratio": measured / env}
        if s == 1:
            slope = 0.25 ** k / beta_fn(k + 1, k + 1)
            row["spline_constant"] = 2 * slope
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# Caccioppoli
# --------------------------------------------------------------------------

@dataclass
class CaccioppoliReport:
    r: float
    h: float
    lhs: float
    f_norm: float
    u_term: float
    implied_constant: float | None
    trivial: bool = False

    def to_row(self) -> list:
        C = "" if self.implied_constant is None else f"{self.implied_constant:.12g}"
        return [f"{self.r:.12g}", f"{self.h:.12g}", f"{self.lhs:.12g}", f"{self.f_norm:.12g}", f"{self.u_term:.12g}", C, int(self.trivial)]


CACCIOPPOLI_HEADER = ["r", "h", "lhs", "f_norm", "u_term", "implied_C", "trivial"]


def caccioppoli_check(exp: Experiment, r: float, grid: Grid | None = None) -> CaccioppoliReport:
    """``||D^{2b}u||_{p,lam;B_{r/2}}`` vs ``||f||_{p,lam;B_r} + r^{-2b}||u||_{p,lam;B_r}``."""
    grid = grid or exp.grid()
    u = exp.u(grid)
    A = exp.A()
    b = A.b
    f = apply_operator(A, u)
    D = _all_derivatives(u, 2 * b)
    lhs = _morrey_on(D, exp.p, exp.lam, exp.ball(r / 2))
    f_norm = _morrey_on(f, exp.p, exp.lam, exp.ball(r))
    u_term = r ** (-2 * b) * _morrey_on(u, exp.p, exp.lam, exp.ball(r))
    rhs = f_norm + u_term
    if rhs == 0:
        return CaccioppoliReport(r, grid.h, lhs, f_norm, u_term, None if lhs > 0 else 0.0, trivial=lhs == 0)
    return CaccioppoliReport(r, grid.h, lhs, f_norm, u_term, lhs / rhs, trivial=lhs == 0)


def caccioppoli_table(exp: Experiment, radii=None) -> list[CaccioppoliReport]:
    return [caccioppoli_check(exp, r) for r in (radii or exp.radii)]


# --------------------------------------------------------------------------
# Weighted seminorms and interpolation
# --------------------------------------------------------------------------

def theta_seminorms(exp: Experiment, r: float, s_list, grid: Grid | None = None, u: GridFunction | None = None) -> dict:
    """``Theta_s = max_theta [theta (1-theta) r]^s ||D^s u||_{p,lam;B_{theta r}}`` over ``exp.thetas``."""
    grid = grid or exp.grid()
    u = u if u is not None else exp.u(grid)
    out = {}
    for s in s_list:
        if s > 2 * exp.b:
            raise ValueError(f"s = {s} exceeds 2b = {2 * exp.b}")
        D = _all_derivatives(u, s)
        best = 0.0
        for th in exp.thetas:
            val = (th * (1 - th) * r) ** s * _morrey_on(D, exp.p, exp.lam, exp.ball(th * r))
            best = max(best, val)
        out[s] = best
    return out


@dataclass
class InterpolationReport:
    r: float
    s: int
    thetas: dict
    eps: tuple
    constants: tuple  # minimal C per eps
    holds_with_zero: tuple
    spread: float  # max/min over positive constants (1 if at most one positive, inf if mixed zero/positive)
    degenerate: bool = False

    def rows(self) -> list[list]:
        return [
            [f"{self.r:.12g}", self.s, f"{e:.12g}", f"{c:.12g}", int(z)]
            for e, c, z in zip(self.eps, self.constants, self.holds_with_zero)
        ]


def interpolation_constants(thetas: dict, s: int, two_b: int, eps_list) -> list[float]:
    """Smallest ``C`` with ``Theta_s <= eps Theta_{2b} + C eps^{-s/(2b-s)} Theta_0`` per ``eps``."""
    T0, Ts, Tb = thetas[0], thetas[s], thetas[two_b]
    out = []
    for eps in eps_list:
        gap = Ts - eps * Tb
        if gap <= 0:
            out.append(0.0)
        elif T0 == 0:
            out.append(math.inf)
        else:
            out.append(gap * eps ** (s / (two_b - s)) / T0)
    return out


def interpolation_check(exp: Experiment, r: float, eps_list=(0.1, 0.5, 1.0, 1.9), s: int = 1) -> InterpolationReport:
    two_b = 2 * exp.b
    if not 1 <= s <= two_b - 1:
        raise ValueError(f"s must lie in [1, {two_b - 1}]")
    if any(not 0 < e < 2 for e in eps_list):
        raise ValueError("eps must lie in (0, 2)")
    th = theta_seminorms(exp, r, sorted({0, s, two_b}))
    consts = interpolation_constants(th, s, two_b, eps_list)
    degenerate = th[0] == 0 and th[s] > 0
    pos = [c for c in consts if c > 0]
    if not pos:
        spread = 1.0
    elif len(pos) < len(consts) or any(math.isinf(c) for c in pos):
        spread = math.inf
    else:
        spread = max(pos) / min(pos)
    return InterpolationReport(r, s, th, tuple(eps_list), tuple(consts), tuple(c == 0 for c in consts), spread, degenerate)


# --------------------------------------------------------------------------
# Commutator smallness
# --------------------------------------------------------------------------

@dataclass
class CommutatorRow:
    r: float
    h: float
    ratio: float
    eta: float
    commutator_norm: float
    f_norm: float

    def to_row(self) -> list:
        return [f"{v:.12g}" for v in (self.r, self.h, self.ratio, self.eta, self.commutator_norm, self.f_norm)]


COMMUTATOR_HEADER = ["r", "h", "ratio", "eta_a", "commutator_norm", "f_norm"]


def commutator_smallness_scan(
    a,
    K=None,
    alpha=(2, 0, 0),
    f=None,
    radii=(0.5, 0.25, 0.125),
    p: float = 2.0,
    lam: float = 1.0,
    nodes_per_radius: int = 8,
    margin: float = 1.25,
) -> list[CommutatorRow]:
    """Ratio ``||c_alpha[a, f_r]||_{p,lam;B_r} / ||f_r||_{p,lam;B_r}`` with ``f_r(x) = f(x/r)``.

    ``f`` is a catalog selection evaluated at ``x/r`` (default: the smooth
    bump of radius 0.9).  Each radius gets its own grid with ``h = r /
    nodes_per_radius`` so the discretization is identical in rescaled
    variables and only the coefficient ``a`` changes with ``r``.
    """
    alpha = tuple(alpha)
    n = len(alpha)
    K = K or fundamental_solution("laplace", n)
    f = f or {"name": "bump", "radius": 0.9}
    rows = []
    for r in radii:
        h = r / nodes_per_radius
        grid = Grid(h, Region.cube(n, margin * r))
        fr = GridFunction(grid, catalog.evaluate(f, grid.points / r))
        ag = catalog.sample(a, grid)
        ball = Region.ball(np.zeros(n), r)
        c = commutator(K, alpha, ag, fr, eval_region=ball)
        cn = _morrey_on(c, p, lam, ball)
        fn = _morrey_on(fr, p, lam, ball)
        eta = vmo_modulus(ag, r, ball, BallFamily.dyadic(grid, ball))
        rows.append(CommutatorRow(r, h, cn / fn if fn > 0 else 0.0, eta, cn, fn))
    return rows


# --------------------------------------------------------------------------
# Regularity
# --------------------------------------------------------------------------

@dataclass
class RegularityReport:
    h: float
    s: int
    sigma: float
    holder: float
    holder_inflated: float
    sigma_inflated: float
    data_norm: float
    ratio: float
    ratio_inflated: float
    campanato: float
    campanato_mu: float

    def to_row(self) -> list:
        return [self.s] + [
            f"{v:.12g}"
            for v in (
                self.h,
                self.sigma,
                self.holder,
                self.ratio,
                self.sigma_inflated,
                self.ratio_inflated,
                self.campanato_mu,
                self.campanato,
            )
        ]


REGULARITY_HEADER = ["s", "h", "sigma", "holder", "ratio", "sigma_inflated", "ratio_inflated", "campanato_mu", "campanato"]


def regularity_experiment(exp: Experiment, s: int, inner_radius: float = 0.5, grid: Grid | None = None) -> RegularityReport:
    """Measured Hölder ratio of ``D^s u`` at the predicted exponent, and at exponent + 0.1.

    The inner region is ``B_{inner_radius}`` around the experiment center;
    the data norm ``||f|| + ||u||`` is taken over the whole outer region.
    """
    verdict = classify(ProblemParams.make(exp.n, exp.b, exp.p, exp.lam, s))
    if verdict.case != "c":
        raise ValueError(f"(p, lambda, s) is case {verdict.case}, not a Hölder configuration")
    sigma = float(verdict.sigma)
    grid = grid or exp.grid()
    u = exp.u(grid)
    f = apply_operator(exp.A(), u)
    outer = grid.region
    data = _morrey_on(f, exp.p, exp.lam, outer) + _morrey_on(u, exp.p, exp.lam, outer)
    D = _all_derivatives(u, s)
    inner = exp.ball(inner_radius)
    hold = holder_seminorm(D, sigma, inner)
    sig2 = min(1.0, sigma + 0.1)
    hold2 = holder_seminorm(D, sig2, inner)
    mu = (2 * exp.b - s) * exp.p + exp.lam
    camp = campanato_seminorm(D, exp.p, mu, inner, BallFamily.dyadic(grid, inner))
    return RegularityReport(grid.h, s, sigma, hold, hold2, sig2, data, hold / data, hold2 / data, camp, mu)


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    header: list
    rows: list
    properties: dict  # name -> bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.properties.values())


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def default_config(suite: str) -> dict:
    if suite == "caccioppoli":
        # solutions vanish to order 2b at the ball center, so every term scales alike
        return {
            "experiments": [
                {"name": "laplace_harmonic_quadratic", "operator": "laplace", "n": 2,
                 "solution": {"name": "harmonic_quadratic"}, "h": 0.02},
                {"name": "laplace_one_minus_cos_cos", "operator": "laplace", "n": 2,
                 "solution": {"name": "one_minus_cos_cos"}, "h": 0.02},
                {"name": "bilaplace_one_minus_cos_cos_sq", "operator": "bilaplace", "n": 2,
                 "solution": {"name": "one_minus_cos_cos", "power": 2}, "h": 0.02},
            ],
            "max_radius_spread": 4.0,
            "max_refinement_change": 0.3,
        }
    if suite == "interpolation":
        # radius comparable to the solutions' length scale keeps Theta_2 / Theta_1 moderate
        common = {"n": 2, "h": 0.05, "half_width": 2.0, "r0": 1.2}
        return {
            "experiments": [
                {"name": "laplace_sin_cos", "operator": "laplace", "solution": {"name": "sin_cos"}, **common},
                {"name": "laplace_exp_cos", "operator": "laplace", "solution": {"name": "exp_cos"}, **common},
                {"name": "bilaplace_sin_cos", "operator": "bilaplace", "solution": {"name": "sin_cos"}, **common},
            ],
            "eps": [0.1, 0.5, 1.0, 1.9],
            "s": 1,
            "max_spread": 10.0,
        }
    if suite == "commutator":
        return {
            "coefficients": [
                {"name": "smooth_x1", "a": {"name": "coordinate", "axis": 0}, "expect": "decay"},
                {"name": "sign_x1", "a": {"name": "sign_x1"}, "expect": "no_decay"},
            ],
            "alpha": [2, 0, 0],
            "radii": [0.5, 0.25, 0.125],
            "p": 2.0,
            "lambda": 1.0,
            "nodes_per_radius": 8,
            "decay_max": 0.5,
            "no_decay_min": 0.8,
        }
    if suite == "regularity":
        return {
            "experiment": {"name": "radial_power", "operator": "laplace", "n": 3,
                           "solution": {"name": "power", "gamma": 1.5}, "h": 0.1, "half_width": 0.8,
                           "p": 4.0, "lam": 1.0, "exclude": [[0.0, 0.0, 0.0]]},
            "s": 1,
            "inner_radius": 0.5,
            "max_refinement_growth": 1.5,
        }
    raise ValueError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)}")


def _suite_caccioppoli(cfg: dict, threads: int) -> SuiteResult:
    exps = [Experiment.from_dict(e) for e in cfg["experiments"]]
    cells = [(i, level, r) for i, e in enumerate(exps) for level in (0, 1) for r in e.radii]

    def run(cell):
        i, level, r = cell
        e = exps[i] if level == 0 else exps[i].refined()
        return cell, caccioppoli_check(e, r)

    results = sorted(_map(run, cells, threads), key=lambda t: t[0])
    rows, props, details = [], {}, {}
    for i, e in enumerate(exps):
        by = {(lv, r): rep for (j, lv, r), rep in results if j == i}
        for (lv, r), rep in sorted(by.items()):
            rows.append([e.name] + rep.to_row())
        Cs = [by[(0, r)].implied_constant for r in e.radii]
        Cf = [by[(1, r)].implied_constant for r in e.radii]
        ok = all(c is not None and c > 0 for c in Cs + Cf)
        spread = max(Cs) / min(Cs) if ok else math.inf
        change = max(abs(b - a) / a for a, b in zip(Cs, Cf)) if ok else math.inf
        details[e.name] = {"radius_spread": spread, "refinement_change": change}
        props[f"{e.name}:radius_spread<={cfg['max_radius_spread']}"] = spread <= cfg["max_radius_spread"]
        props[f"{e.name}:refinement_change<={cfg['max_refinement_change']}"] = change <= cfg["max_refinement_change"]
    return SuiteResult("caccioppoli", ["experiment"] + CACCIOPPOLI_HEADER, rows, props, details)


def _suite_interpolation(cfg: dict, threads: int) -> SuiteResult:
    exps = [Experiment.from_dict(e) for e in cfg["experiments"]]
    reps = _map(lambda e: interpolation_check(e, e.r0, tuple(cfg["eps"]), cfg["s"]), exps, threads)
    rows, props, details = [], {}, {}
    for e, rep in zip(exps, reps):
        rows += [[e.name] + row for row in rep.rows()]
        details[e.name] = {"spread": rep.spread, "thetas": {str(k): v for k, v in rep.thetas.items()}}
        props[f"{e.name}:spread<={cfg['max_spread']}"] = rep.spread <= cfg["max_spread"]
    return SuiteResult("interpolation", ["experiment", "r", "s", "eps", "min_C", "holds_with_zero"], rows, props, details)


def _suite_commutator(cfg: dict, threads: int) -> SuiteResult:
    coefs = cfg["coefficients"]
    alpha = tuple(cfg["alpha"])
    radii = tuple(cfg["radii"])
    cells = [(i, k) for i in range(len(coefs)) for k in range(len(radii))]

    def run(cell):
        i, k = cell
        row = commutator_smallness_scan(
            coefs[i]["a"], None, alpha, cfg.get("f"), (radii[k],), cfg["p"], cfg["lambda"], cfg["nodes_per_radius"]
        )[0]
        return cell, row

    results = dict(sorted(_map(run, cells, threads), key=lambda t: t[0]))
    rows, props, details = [], {}, {}
    for i, c in enumerate(coefs):
        scan = [results[(i, k)] for k in range(len(radii))]
        rows += [[c["name"]] + row.to_row() for row in scan]
        decay = scan[-1].ratio / scan[0].ratio if scan[0].ratio > 0 else 0.0
        details[c["name"]] = {"decay": decay}
        if c["expect"] == "decay":
            props[f"{c['name']}:decay<={cfg['decay_max']}"] = decay <= cfg["decay_max"]
        else:
            props[f"{c['name']}:decay>={cfg['no_decay_min']}"] = decay >= cfg["no_decay_min"]
    return SuiteResult("commutator", ["coefficient"] + COMMUTATOR_HEADER, rows, props, details)


def _suite_regularity(cfg: dict, threads: int) -> SuiteResult:
    e = Experiment.from_dict(cfg["experiment"])
    reps = _map(lambda ex: regularity_experiment(ex, cfg["s"], cfg["inner_radius"]), [e, e.refined()], threads)
    rows = [[e.name] + r.to_row() for r in reps]
    growth = reps[1].ratio / reps[0].ratio
    props = {f"{e.name}:holder_ratio_growth<={cfg['max_refinement_growth']}": growth <= cfg["max_refinement_growth"]}
    details = {e.name: {"growth": growth, "inflated_growth": reps[1].ratio_inflated / reps[0].ratio_inflated}}
    return SuiteResult("regularity", ["experiment"] + REGULARITY_HEADER, rows, props, details)


SUITES = {
    "caccioppoli": _suite_caccioppoli,
    "interpolation": _suite_interpolation,
    "commutator": _suite_commutator,
    "regularity": _suite_regularity,
}


def run_suite(name: str, config: dict | None = None, threads: int = 1) -> SuiteResult:
    """Run a named suite; ``config`` entries override :func:`default_config`."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    cfg = default_config(name)
    cfg.update(config or {})
    res = SUITES[name](cfg, threads)
    res.details["config"] = cfg
    return res
