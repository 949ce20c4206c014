"""Regularity classification of ``D^s u`` in Morrey, BMO or Hölder classes.

All arithmetic is exact (:class:`fractions.Fraction`).  Parameters may be
given as ints, Fractions, ``"a/b"`` strings or floats; floats are converted
exactly and flagged as inexact, so a float landing near the BMO line gets a
proximity warning instead of being snapped onto it.

Phase diagram in the ``(p, lambda)`` plane: ``B_s = (n/(2b-s), 0)``,
``A_s = (1, n-2b+s)``, ``B = (1, 0)``.  The line through ``(0, n)``, ``A_s``
and ``B_s`` is where ``p = (n - lambda)/(2b - s)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

PROXIMITY = 1e-9


class ClassifierError(ValueError):
    pass


class NoClaimError(ClassifierError):
    """The parameters fall outside every interval for this ``s``."""

    def __init__(self, message: str, suggested_s: int | None = None):
        super().__init__(message)
        self.suggested_s = suggested_s


def to_rational(x) -> tuple[Fraction, bool]:
    """``(value, exact)``; strings like ``"3/2"`` and ints are exact, floats are not."""
    if isinstance(x, bool):
        raise ClassifierError("boolean is not a number")
    if isinstance(x, (int, Fraction)):
        return Fraction(x), True
    if isinstance(x, str):
        try:
            return Fraction(x.strip()), True
        except (ValueError, ZeroDivisionError):
            raise ClassifierError(f"cannot parse {x!r} as a rational") from None
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ClassifierError("parameters must be finite")
        return Fraction(x), float(x).is_integer()
    raise ClassifierError(f"unsupported number {x!r}")


def least_order_s0(n: int, b: int) -> int:
    """Least ``s >= 0`` with ``2b - s < n``."""
    if n < 2 or b < 1:
        raise ClassifierError("need n >= 2 and b >= 1")
    return max(0, 2 * b - n + 1)


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class ProblemParams:
    n: int
    b: int
    p: Fraction
    lam: Fraction
    s: int | None = None
    m: int = 1
    exact: bool = True

    @classmethod
    def make(cls, n, b, p, lam, s=None, m=1) -> ProblemParams:
        P, ep = to_rational(p)
        L, el = to_rational(lam)
        errors = []
        if int(n) != n or n < 2:
            errors.append("n must be an integer >= 2")
        if int(b) != b or b < 1:
            errors.append("b must be an integer >= 1")
        if int(m) != m or m < 1:
            errors.append("m must be an integer >= 1")
        if P <= 1:
            errors.append("p must exceed 1")
        if not 0 < L < n:
            errors.append("lambda must lie in (0, n)")
        if s is not None and int(s) != s:
            errors.append("s must be an integer")
        if errors:
            raise ClassifierError("; ".join(errors))
        return cls(int(n), int(b), P, L, None if s is None else int(s), int(m), ep and el)

    @property
    def ray(self) -> Fraction:
        """``(n - lambda)/p``; every exponent depends on ``(p, lambda)`` only through it."""
        return (self.n - self.lam) / self.p

    def to_dict(self) -> dict:
        return {"n": self.n, "b": self.b, "m": self.m, "p": _fmt(self.p), "lambda": _fmt(self.lam), "s": self.s}


CASE_LABELS = {"a": "MorreyGain", "b": "BMO", "c": "Holder"}


@dataclass(frozen=True)
class RegularityVerdict:
    case: str
    space: str
    params: ProblemParams
    morrey_exponent: Fraction | None = None
    sigma: Fraction | None = None
    warnings: tuple = ()

    @property
    def label(self) -> str:
        return CASE_LABELS[self.case]

    def to_dict(self) -> dict:
        d = {"case": self.case, "label": self.label, "space": self.space, "params": self.params.to_dict()}
        if self.morrey_exponent is not None:
            d["morrey_exponent"] = float(self.morrey_exponent)
            d["morrey_exponent_exact"] = _fmt(self.morrey_exponent)
        if self.sigma is not None:
            d["sigma"] = float(self.sigma)
            d["sigma_exact"] = _fmt(self.sigma)
        d["warnings"] = list(self.warnings)
        return d


def thresholds(n: int, b: int, lam: Fraction, s: int) -> tuple[Fraction, Fraction | None]:
    """``((n-lambda)/(2b-s), (n-lambda)/(2b-s-1))``; the upper bound is ``None`` (infinity) for ``s = 2b-1``."""
    lower = (n - lam) / (2 * b - s)
    upper = None if s == 2 * b - 1 else (n - lam) / (2 * b - s - 1)
    return lower, upper


def _near(x: Fraction, y: Fraction) -> bool:
    return abs(float(x - y)) <= PROXIMITY * max(1.0, abs(float(y)))


def classify(params: ProblemParams) -> RegularityVerdict:
    """Case a (Morrey gain), b (BMO, exact threshold only) or c (Hölder) for ``D^s u``."""
    n, b, s = params.n, params.b, params.s
    s0 = least_order_s0(n, b)
    if s is None or not s0 <= s <= 2 * b - 1:
        raise ClassifierError(f"s must lie in {{{s0}, ..., {2 * b - 1}}}, got {s}")
    p = params.p
    lower, upper = thresholds(n, b, params.lam, s)
    warnings = []
    if not params.exact and _near(p, lower):
        warnings.append(f"p is within {PROXIMITY:g} of the BMO threshold {_fmt(lower)}; pass exact rationals to test it")
    if p < lower:
        mu = (2 * b - s) * p + params.lam
        return RegularityVerdict("a", f"L^{{{_fmt(p)},{_fmt(mu)}}}", params, morrey_exponent=mu, warnings=tuple(warnings))
    if p == lower:
        return RegularityVerdict("b", "BMO", params, warnings=tuple(warnings))
    if upper is not None and p >= upper:
        raise NoClaimError(
            f"no claim at (p={_fmt(p)}, lambda={_fmt(params.lam)}, s={s}): p >= {_fmt(upper)}; see next s = {s + 1}",
            suggested_s=s + 1,
        )
    sigma = 2 * b - s - params.ray
    return RegularityVerdict("c", f"C^{{0,{_fmt(sigma)}}}", params, sigma=sigma, warnings=tuple(warnings))


def classify_all(params: ProblemParams) -> dict[int, RegularityVerdict | NoClaimError]:
    """Verdict (or the no-claim error) for every admissible ``s``."""
    s0 = least_order_s0(params.n, params.b)
    out = {}
    for s in range(s0, 2 * params.b):
        q = ProblemParams(params.n, params.b, params.p, params.lam, s, params.m, params.exact)
        try:
            out[s] = classify(q)
        except NoClaimError as exc:
            out[s] = exc
    return out


@dataclass(frozen=True)
class HolderVerdict:
    s0: int
    gamma: Fraction
    space: str
    params: ProblemParams

    def to_dict(self) -> dict:
        return {
            "s0": self.s0,
            "derivatives": self.s0 - 1,
            "gamma": float(self.gamma),
            "gamma_exact": _fmt(self.gamma),
            "space": self.space,
            "params": self.params.to_dict(),
        }


def low_order_holder(params: ProblemParams) -> HolderVerdict:
    """Hölder class ``C^{s0-1, gamma}`` of ``u``, ``gamma = 2b - s0 + 1 - (n-lambda)/p``."""
    n, b = params.n, params.b
    s0 = least_order_s0(n, b)
    if s0 == 0:
        raise NoClaimError(f"s0 = 0 for n={n}, b={b}: no low-order claim")
    upper = (n - params.lam) / (2 * b - s0)
    if not 1 < params.p < upper:
        interval = f"(1, {_fmt(upper)})"
        empty = " (empty)" if upper <= 1 else ""
        raise NoClaimError(f"p={_fmt(params.p)} outside the admissible interval {interval}{empty}")
    gamma = 2 * b - s0 + 1 - params.ray
    mu = (2 * b - s0 + 1) * params.p + params.lam
    if not n < mu < n + params.p:
        raise AssertionError(f"Campanato exponent {mu} outside (n, n+p)")
    return HolderVerdict(s0, gamma, f"C^{{{s0 - 1},{_fmt(gamma)}}}", params)


# --------------------------------------------------------------------------
# Phase diagram
# --------------------------------------------------------------------------

Point = tuple  # (Fraction, Fraction)


@dataclass(frozen=True)
class DiagramGeometry:
    n: int
    b: int
    s_range: tuple
    B_points: dict
    A_points: dict
    corner: Point
    quads: dict  # s -> (B_s, B_{s+1}, A_{s+1}, A_s) for s < 2b-1
    unbounded: tuple  # (B_{2b-1}, A_{2b-1}) bounding Q_{2b-1} on the left

    def to_rows(self, query=None) -> list[list]:
        rows = [["point", "B", "", _fmt(self.corner[0]), _fmt(self.corner[1])]]
        for s in self.s_range:
            for name, pts in (("B_s", self.B_points), ("A_s", self.A_points)):
                rows.append(["point", name, s, _fmt(pts[s][0]), _fmt(pts[s][1])])
        for s, quad in self.quads.items():
            for k, v in enumerate(quad):
                rows.append([f"Q_vertex{k}", "Q_s", s, _fmt(v[0]), _fmt(v[1])])
        s_last = self.s_range[-1]
        rows.append(["Q_unbounded", "Q_s", s_last, _fmt(self.unbounded[0][0]), _fmt(self.unbounded[0][1])])
        rows.append(["Q_unbounded", "Q_s", s_last, _fmt(self.unbounded[1][0]), _fmt(self.unbounded[1][1])])
        if query is not None:
            p, lam = query
            C = point_C(self.n, p, lam)
            rows.append(["query", "P", "", _fmt(p), _fmt(lam)])
            rows.append(["point", "C", "", _fmt(C[0]), _fmt(C[1])])
            region = locate(self, p, lam)
            if region is not None and region[0] == "c":
                rows.append(["segment_CA", "length", region[1], f"{segment_length(self, p, lam, region[1]):.15g}", ""])
        return rows


def diagram_geometry(n: int, b: int) -> DiagramGeometry:
    s0 = least_order_s0(n, b)
    s_range = tuple(range(s0, 2 * b))
    Bp = {s: (Fraction(n, 2 * b - s), Fraction(0)) for s in s_range}
    Ap = {s: (Fraction(1), Fraction(n - 2 * b + s)) for s in s_range}
    quads = {s: (Bp[s], Bp[s + 1], Ap[s + 1], Ap[s]) for s in s_range[:-1]}
    return DiagramGeometry(n, b, s_range, Bp, Ap, (Fraction(1), Fraction(0)), quads, (Bp[s_range[-1]], Ap[s_range[-1]]))


def point_C(n: int, p, lam) -> Point:
    """Intersection of ``{p = 1}`` with the line through ``(0, n)`` and ``(p, lambda)``."""
    p, lam = Fraction(p), Fraction(lam)
    t = 1 / p
    return (Fraction(1), n + t * (lam - n))


def _cross(o: Point, a: Point, q: Point) -> Fraction:
    return (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0])


def locate(geom: DiagramGeometry, p, lam):
    """Region of the semistrip containing ``(p, lambda)``.

    Returns ``("a", s0)`` inside the triangle ``B B_{s0} A_{s0}``,
    ``("b", s)`` on the segment ``A_s B_s``, ``("c", s)`` inside ``Q_s``,
    or ``None`` outside the open semistrip.  Uses orientation tests only.
    """
    p, lam = Fraction(p), Fraction(lam)
    if not (p > 1 and 0 < lam < geom.n):
        return None
    q = (p, lam)
    # orientation w.r.t. each line A_s -> B_s: < 0 on the side of the corner B
    sides = {s: _cross(geom.A_points[s], geom.B_points[s], q) for s in geom.s_range}
    for s in geom.s_range:
        if sides[s] == 0:
            return ("b", s)
    s0 = geom.s_range[0]
    if sides[s0] < 0:
        return ("a", s0)
    for s in geom.s_range[:-1]:
        if sides[s] > 0 and sides[s + 1] < 0:
            return ("c", s)
    return ("c", geom.s_range[-1])


def in_triangle(geom: DiagramGeometry, s: int, p, lam) -> bool:
    """Strictly inside the triangle ``B B_s A_s`` (within the semistrip)."""
    q = (Fraction(p), Fraction(lam))
    tri = (geom.corner, geom.B_points[s], geom.A_points[s])
    signs = [_cross(tri[i], tri[(i + 1) % 3], q) for i in range(3)]
    return all(x > 0 for x in signs) or all(x < 0 for x in signs)


def segment_length(geom: DiagramGeometry, p, lam, s: int) -> float:
    C = point_C(geom.n, p, lam)
    A = geom.A_points[s]
    return math.hypot(float(C[0] - A[0]), float(C[1] - A[1]))


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

PALETTE = {
    "background": "#ffffff",
    "axis": "#222222",
    "strip": "#f4f4f4",
    "case_a": "#cfe3f5",
    "quad": ("#f7d9b5", "#d7efc9", "#efd0e8", "#fff3b0"),
    "unbounded": "#e6e6e6",
    "hatch": "#999999",
    "line": "#5a5a5a",
    "point": "#c0392b",
    "query": "#1f618d",
}

_W, _H, _PAD = 640, 420, 50


def geometry_csv(geom: DiagramGeometry, query=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "label", "s", "p", "lambda"])
    w.writerows(geom.to_rows(query))
    return buf.getvalue()


def render_svg(geom: DiagramGeometry, query=None) -> str:
    """Fixed-palette SVG of the semistrip; ``Q_{2b-1}`` is hatched."""
    n = geom.n
    p_max = float(geom.B_points[geom.s_range[-1]][0]) * 1.25 + 0.5
    sx = (_W - 2 * _PAD) / p_max
    sy = (_H - 2 * _PAD) / n

    def X(p):
        return f"{_PAD + float(p) * sx:.3f}"

    def Y(lam):
        return f"{_H - _PAD - float(lam) * sy:.3f}"

    def poly(pts, fill, extra=""):
        coords = " ".join(f"{X(a)},{Y(c)}" for a, c in pts)
        return f'<polygon points="{coords}" fill="{fill}" stroke="{PALETTE["line"]}" stroke-width="1"{extra}/>'

    s_last = geom.s_range[-1]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<defs><pattern id="hatch" width="8" height="8" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">'
        f'<line x1="0" y1="0" x2="0" y2="8" stroke="{PALETTE["hatch"]}" stroke-width="2"/></pattern></defs>',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="{PALETTE["background"]}"/>',
        poly([(1, 0), (p_max, 0), (p_max, n), (1, n)], PALETTE["strip"]),
        poly([geom.corner, geom.B_points[geom.s_range[0]], geom.A_points[geom.s_range[0]]], PALETTE["case_a"]),
    ]
    for k, (s, quad) in enumerate(geom.quads.items()):
        out.append(poly(quad, PALETTE["quad"][k % len(PALETTE["quad"])]))
    # Q_{2b-1}: right of the last line, clipped to the drawing window
    Bl, Al = geom.unbounded
    region = [Bl, (Fraction(p_max), 0), (Fraction(p_max), n), (1, n), Al]
    out.append(poly(region, PALETTE["unbounded"]))
    out.append(poly(region, "url(#hatch)"))
    for s in geom.s_range:
        out.append(
            f'<line x1="{X(0)}" y1="{Y(n)}" x2="{X(geom.B_points[s][0])}" y2="{Y(0)}" '
            f'stroke="{PALETTE["line"]}" stroke-dasharray="4,3" stroke-width="1"/>'
        )
    out.append(f'<line x1="{X(0)}" y1="{Y(0)}" x2="{X(p_max)}" y2="{Y(0)}" stroke="{PALETTE["axis"]}"/>')
    out.append(f'<line x1="{X(0)}" y1="{Y(0)}" x2="{X(0)}" y2="{Y(n)}" stroke="{PALETTE["axis"]}"/>')
    out.append(f'<text x="{X(p_max)}" y="{float(Y(0)) + 30:.3f}" font-size="13" text-anchor="end">p</text>')
    out.append(f'<text x="{_PAD - 30}" y="{Y(n)}" font-size="13">&#955;</text>')
    labels = [("B", geom.corner)]
    for s in geom.s_range:
        labels += [(f"B{s}", geom.B_points[s]), (f"A{s}", geom.A_points[s])]
    for name, pt in labels:
        out.append(f'<circle cx="{X(pt[0])}" cy="{Y(pt[1])}" r="3" fill="{PALETTE["point"]}"/>')
        out.append(f'<text x="{float(X(pt[0])) + 5:.3f}" y="{float(Y(pt[1])) - 5:.3f}" font-size="11">{name}</text>')
    for s, quad in geom.quads.items():
        cx = sum(float(v[0]) for v in quad) / 4
        cy = sum(float(v[1]) for v in quad) / 4
        out.append(f'<text x="{X(cx)}" y="{Y(cy)}" font-size="11" text-anchor="middle">Q{s}</text>')
    out.append(
        f'<text x="{X((float(Bl[0]) + p_max) / 2)}" y="{Y(n / 2)}" font-size="11" text-anchor="middle">Q{s_last}</text>'
    )
    if query is not None:
        p, lam = (Fraction(v) for v in query)
        C = point_C(n, p, lam)
        out.append(
            f'<line x1="{X(0)}" y1="{Y(n)}" x2="{X(p)}" y2="{Y(lam)}" stroke="{PALETTE["query"]}" stroke-width="1"/>'
        )
        out.append(f'<circle cx="{X(p)}" cy="{Y(lam)}" r="3" fill="{PALETTE["query"]}"/>')
        out.append(f'<circle cx="{X(C[0])}" cy="{Y(C[1])}" r="3" fill="{PALETTE["query"]}"/>')
        out.append(f'<text x="{float(X(C[0])) + 5:.3f}" y="{Y(C[1])}" font-size="11">C</text>')
        region = locate(geom, p, lam)
        if region is not None and region[0] == "c":
            A = geom.A_points[region[1]]
            out.append(
                f'<line x1="{X(C[0])}" y1="{Y(C[1])}" x2="{X(A[0])}" y2="{Y(A[1])}" '
                f'stroke="{PALETTE["query"]}" stroke-width="3"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def diagram(n: int, b: int, output_kind: str = "svg", query=None):
    """``(geometry, rendered text)``; ``output_kind`` is ``"svg"`` or ``"csv"``."""
    geom = diagram_geometry(n, b)
    if query is not None:
        query = tuple(to_rational(v)[0] for v in query)
    if output_kind == "svg":
        return geom, render_svg(geom, query)
    if output_kind == "csv":
        return geom, geometry_csv(geom, query)
    raise ClassifierError(f"unknown output kind {output_kind!r}")
