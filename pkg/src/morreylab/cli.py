"""``morreylab`` command-line entry point.

Every subcommand reads an optional JSON ``--config`` file; flags given on
the command line override its fields.  Exit codes: 0 success, 1 validation
or I/O error, 2 property-suite failure.  The thread count for ``verify``
comes from ``MORREYLAB_THREADS`` (default 1); output order never depends on it.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import catalog, classifier, harness, kernels, spaces, symbol
from .grid import Grid, Region, multiindices_of_length

THREADS_ENV = "MORREYLAB_THREADS"


class ValidationError(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _csv_text(config: dict, header: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True, default=_json_default) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: str | None, text: str, stdout) -> None:
    if path is None or path == "-":
        stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ValidationError([f"cannot write {path}: {exc.strerror or exc}"]) from None


# --------------------------------------------------------------------------
# Config resolution
# --------------------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ValidationError([f"cannot read config {path}: {exc.strerror or exc}"]) from None
    except json.JSONDecodeError as exc:
        raise ValidationError([f"config {path} is not valid JSON: {exc}"]) from None
    if not isinstance(cfg, dict):
        raise ValidationError([f"config {path} must be a JSON object"])
    return cfg


def _resolve(args, keys) -> dict:
    cfg = _load_config(getattr(args, "config", None))
    for key in list(keys) + ["out"]:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = val
    return cfg


def _json_arg(text):
    """Catalog selections and lists on the command line: JSON, or a bare name."""
    if text is None:
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _require(cfg: dict, keys, errors: list) -> None:
    for k in keys:
        if cfg.get(k) is None:
            errors.append(f"missing required field '{k}'")


def _int_field(cfg, key, errors, minimum=None):
    v = cfg.get(key)
    if v is None:
        return None
    try:
        iv = int(v)
        if iv != float(v):
            raise ValueError
    except (TypeError, ValueError):
        errors.append(f"'{key}' must be an integer")
        return None
    if minimum is not None and iv < minimum:
        errors.append(f"'{key}' must be >= {minimum}")
    return iv


def _float_field(cfg, key, errors, positive=False):
    v = cfg.get(key)
    if v is None:
        return None
    try:
        fv = float(classifier.to_rational(v)[0]) if isinstance(v, str) else float(v)
    except (TypeError, ValueError):
        errors.append(f"'{key}' must be a number")
        return None
    if positive and fv <= 0:
        errors.append(f"'{key}' must be positive")
    return fv


def _parse_number(v, exact: bool):
    """CLI numbers: ``a/b`` strings are always exact; decimals are exact only with ``--exact``."""
    if isinstance(v, str) and "/" not in v and not exact:
        try:
            return float(v)
        except ValueError:
            return v
    return v


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_classify(args, stdout) -> int:
    cfg = _resolve(args, ["n", "b", "m", "p", "lambda", "s", "exact"])
    errors = []
    _require(cfg, ["n", "b", "p", "lambda"], errors)
    n = _int_field(cfg, "n", errors, 2)
    b = _int_field(cfg, "b", errors, 1)
    m = _int_field(cfg, "m", errors, 1) or 1
    s = _int_field(cfg, "s", errors)
    if errors:
        raise ValidationError(errors)
    exact = bool(cfg.get("exact", False))
    try:
        params = classifier.ProblemParams.make(
            n, b, _parse_number(cfg["p"], exact), _parse_number(cfg["lambda"], exact), s, m
        )
    except classifier.ClassifierError as exc:
        raise ValidationError([str(exc)]) from None
    out = {"config": cfg, "s0": classifier.least_order_s0(n, b)}
    code = 0
    if s is not None:
        try:
            out["verdict"] = classifier.classify(params).to_dict()
            out.update({k: out["verdict"][k] for k in ("case", "sigma") if k in out["verdict"]})
        except classifier.NoClaimError as exc:
            out["error"] = {"kind": "no_claim", "message": str(exc), "suggested_s": exc.suggested_s}
            code = 1
        except classifier.ClassifierError as exc:
            raise ValidationError([str(exc)]) from None
    else:
        out["verdicts"] = {
            str(k): (v.to_dict() if isinstance(v, classifier.RegularityVerdict) else {"no_claim": str(v)})
            for k, v in classifier.classify_all(params).items()
        }
        try:
            out["low_order"] = classifier.low_order_holder(params).to_dict()
        except classifier.NoClaimError as exc:
            out["low_order"] = {"no_claim": str(exc)}
    _write(cfg.get("out"), _dumps(out), stdout)
    return code


def cmd_diagram(args, stdout) -> int:
    cfg = _resolve(args, ["n", "b", "out", "csv", "query"])
    errors = []
    _require(cfg, ["n", "b"], errors)
    n = _int_field(cfg, "n", errors, 2)
    b = _int_field(cfg, "b", errors, 1)
    query = cfg.get("query")
    if isinstance(query, str):
        query = [q.strip() for q in query.split(",")]
    if query is not None and len(query) != 2:
        errors.append("query must be 'p,lambda'")
    if errors:
        raise ValidationError(errors)
    try:
        q = None if query is None else tuple(classifier.to_rational(v)[0] for v in query)
    except classifier.ClassifierError as exc:
        raise ValidationError([str(exc)]) from None
    geom = classifier.diagram_geometry(n, b)
    svg = classifier.render_svg(geom, q)
    table = "# config: " + json.dumps(cfg, sort_keys=True) + "\n" + classifier.geometry_csv(geom, q)
    out = cfg.get("out")
    csv_path = cfg.get("csv")
    if out and out != "-":
        _write(out, svg, stdout)
        _write(csv_path or str(Path(out).with_suffix(".csv")), table, stdout)
    else:
        _write(csv_path, table, stdout)
        if csv_path:
            stdout.write(svg)
    return 0


def _grid_from(cfg, errors):
    n = _int_field(cfg, "n", errors, 2)
    h = _float_field(cfg, "h", errors, positive=True)
    hw = _float_field(cfg, "half_width", errors, positive=True)
    if errors or n is None or h is None:
        return None
    try:
        region = Region.from_dict(cfg["region"]) if cfg.get("region") else Region.cube(n, hw or 1.0)
        return Grid(h, region)
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(f"bad grid: {exc}")
        return None


def _region_from(cfg, key, n):
    d = cfg.get(key)
    if d is None:
        return None
    return Region.from_dict(d) if isinstance(d, dict) else Region.cube(n, float(d))


NORM_KINDS = ("lp", "sobolev", "morrey", "sobolev_morrey", "bmo", "vmo", "campanato", "holder")


def cmd_norm(args, stdout) -> int:
    cfg = _resolve(args, ["kind", "n", "h", "half_width", "u", "m", "p", "lambda", "mu", "sigma", "order", "R",
                          "eval_region", "pair_budget", "seed", "out"])
    errors = []
    _require(cfg, ["kind", "n", "h", "u"], errors)
    kind = cfg.get("kind")
    if kind is not None and kind not in NORM_KINDS:
        errors.append(f"kind must be one of {NORM_KINDS}")
    need = {
        "lp": ["p"], "sobolev": ["p", "order"], "morrey": ["p", "lambda"], "sobolev_morrey": ["p", "lambda", "order"],
        "bmo": [], "vmo": ["R"], "campanato": ["p", "mu"], "holder": ["sigma"],
    }.get(kind, [])
    _require(cfg, need, errors)
    for key in ("p", "lambda", "mu", "sigma", "R"):
        _float_field(cfg, key, errors)
    order = _int_field(cfg, "order", errors, 0)
    m = _int_field(cfg, "m", errors, 1) or 1
    grid = _grid_from(cfg, errors)
    if errors:
        raise ValidationError(errors)
    try:
        u = catalog.sample(cfg["u"], grid, m=m)
        region = _region_from(cfg, "eval_region", grid.n)
        p = _float_field(cfg, "p", errors)
        lam = _float_field(cfg, "lambda", errors)
        if kind == "lp":
            value = spaces.lp_norm(u, p, region)
        elif kind == "sobolev":
            value = spaces.sobolev_norm(u, order, p, region)
        elif kind == "morrey":
            value = spaces.morrey_norm(u, p, lam, region)
        elif kind == "sobolev_morrey":
            value = spaces.sobolev_morrey_norm(u, order, p, lam, region)
        elif kind == "bmo":
            value = spaces.bmo_seminorm(u, region)
        elif kind == "vmo":
            value = spaces.vmo_modulus(u, float(cfg["R"]), region)
        elif kind == "campanato":
            value = spaces.campanato_seminorm(u, p, float(cfg["mu"]), region)
        else:
            value = spaces.holder_seminorm(u, float(cfg["sigma"]), region, int(cfg.get("pair_budget") or 0),
                                           int(cfg.get("seed") or 0))
    except (ValueError, catalog.CatalogError) as exc:
        raise ValidationError([str(exc)]) from None
    _write(cfg.get("out"), _dumps({"config": cfg, "kind": kind, "value": value}), stdout)
    return 0


def _operator_from(cfg, errors):
    name = cfg.get("operator", "laplace")
    n = _int_field(cfg, "n", errors, 2)
    b = _int_field(cfg, "b", errors, 1) or 1
    m = _int_field(cfg, "m", errors, 1) or 1
    if errors or n is None:
        return None
    try:
        if name == "laplace":
            return symbol.laplacian(n, m)
        if name == "polyharmonic":
            return symbol.polyharmonic(n, b, m)
        if name == "wave":
            return symbol.wave(n)
        if name == "lame":
            return symbol.lame(n, float(cfg.get("mu", 1.0)), float(cfg.get("lam", 1.0)))
        if name == "second_order":
            return symbol.second_order(np.asarray(cfg["Q"], dtype=float))
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(f"bad operator: {exc}")
        return None
    errors.append(f"unknown operator {name!r}")
    return None


def cmd_symbol(args, stdout) -> int:
    cfg = _resolve(args, ["operator", "n", "b", "m", "samples", "seed", "out"])
    errors = []
    _require(cfg, ["n"], errors)
    samples = _int_field(cfg, "samples", errors, symbol.MIN_SPHERE_SAMPLES) or 256
    seed = _int_field(cfg, "seed", errors, 0) or 0
    A = _operator_from(cfg, errors)
    if errors:
        raise ValidationError(errors)
    rep = symbol.ellipticity_constant(A, None, samples, seed)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((16, A.n))
    resid = float(symbol.verify_cofactor_identity(A, None, xi))
    out = {
        "config": cfg,
        "ellipticity": {"delta": rep.delta, "elliptic": rep.elliptic, "witness_xi": list(rep.witness_xi),
                        "samples": rep.samples},
        "cofactor_residual": resid,
    }
    _write(cfg.get("out"), _dumps(out), stdout)
    return 0


def _kernel_from(cfg, errors):
    family = cfg.get("family", "laplace")
    n = _int_field(cfg, "n", errors, 2)
    b = _int_field(cfg, "b", errors, 1) or 1
    if errors or n is None:
        return None
    try:
        if family == "cofactor":
            A = _operator_from(cfg, errors)
            return None if A is None else kernels.fundamental_matrix(A)
        return kernels.fundamental_solution(family, n, b, cfg.get("Q"))
    except kernels.UnsupportedKernel as exc:
        errors.append(str(exc))
        return None


def cmd_kernel_check(args, stdout) -> int:
    cfg = _resolve(args, ["family", "n", "b", "alpha", "samples", "out"])
    errors = []
    _require(cfg, ["n"], errors)
    samples = _int_field(cfg, "samples", errors, 2) or kernels.DEFAULT_SPHERE_ORDER
    K = _kernel_from(cfg, errors)
    if errors:
        raise ValidationError(errors)
    alphas = [tuple(cfg["alpha"])] if cfg.get("alpha") else multiindices_of_length(K.n, 2 * K.b)
    out = {"config": cfg, "kernel": K.describe(), "checks": []}
    for alpha in alphas:
        if len(alpha) != K.n or sum(alpha) != 2 * K.b:
            raise ValidationError([f"alpha {list(alpha)} must have length n and order 2b"])
        entry = {"alpha": list(alpha)}
        if not K.is_log and isinstance(K, kernels.Kernel):
            entry["cz"] = kernels.cz_checks(K, alpha, samples).to_dict()
        entry["surface"] = {
            str(s): kernels.surface_term(K, alpha, s, samples).tolist() for s in range(K.n) if alpha[s] >= 1
        }
        out["checks"].append(entry)
    if isinstance(K, kernels.Kernel) and K.b == 1:
        out["trace_identity"] = float(
            sum(kernels.surface_term(K, tuple(2 * (j == i) for j in range(K.n)), i, samples)[0, 0] for i in range(K.n))
        )
    _write(cfg.get("out"), _dumps(out), stdout)
    return 0


def cmd_represent(args, stdout) -> int:
    cfg = _resolve(args, ["family", "n", "b", "operator", "m", "u", "a", "alpha", "h", "half_width",
                          "eval_half_width", "p", "out"])
    errors = []
    _require(cfg, ["n", "u", "alpha"], errors)
    hs = cfg.get("h", [0.1, 0.05])
    if isinstance(hs, (int, float, str)):
        hs = [float(v) for v in str(hs).split(",")]
    n = _int_field(cfg, "n", errors, 2)
    m = _int_field(cfg, "m", errors, 1) or 1
    hw = _float_field(cfg, "half_width", errors, positive=True) or 1.0
    ehw = _float_field(cfg, "eval_half_width", errors, positive=True) or 0.8 * hw
    p = _float_field(cfg, "p", errors, positive=True) or 2.0
    K = _kernel_from(cfg, errors)
    if errors:
        raise ValidationError(errors)
    cfg.setdefault("operator", "polyharmonic" if K.b > 1 else "laplace")
    cfg.setdefault("b", K.b)
    A0 = _operator_from(cfg, errors)
    if errors:
        raise ValidationError(errors)
    rows = []
    alpha = tuple(cfg["alpha"])
    try:
        for h in hs:
            grid = Grid(float(h), Region.cube(n, hw))
            v = catalog.sample(cfg["u"], grid, m=m)
            A = A0.scaled(catalog.sample(cfg["a"], grid)) if cfg.get("a") is not None else A0
            res = kernels.representation_terms(v, A, K, alpha, Region.cube(n, ehw), p=p)
            rows.append([f"{float(h):.12g}", f"{res.residual:.12g}", f"{res.lhs_norm:.12g}"])
    except (ValueError, catalog.CatalogError, kernels.UnsupportedKernel) as exc:
        raise ValidationError([str(exc)]) from None
    _write(cfg.get("out"), _csv_text(cfg, ["h", "relative_residual", "lhs_norm"], rows), stdout)
    return 0


def cmd_verify(args, stdout) -> int:
    cfg = _resolve(args, ["suite", "out", "summary"])
    errors = []
    _require(cfg, ["suite"], errors)
    suite = cfg.get("suite")
    if suite is not None and suite not in harness.SUITES:
        errors.append(f"unknown suite {suite!r}; expected one of {sorted(harness.SUITES)}")
    try:
        threads = int(os.environ.get(THREADS_ENV, "1"))
        if threads < 1:
            raise ValueError
    except ValueError:
        errors.append(f"{THREADS_ENV} must be a positive integer")
        threads = 1
    if errors:
        raise ValidationError(errors)
    overrides = {k: v for k, v in cfg.items() if k not in ("suite", "out", "summary")}
    try:
        res = harness.run_suite(suite, overrides, threads)
    except (ValueError, KeyError, TypeError, catalog.CatalogError) as exc:
        raise ValidationError([f"suite configuration: {exc}"]) from None
    resolved = res.details.pop("config")
    table = _csv_text({"suite": suite, **resolved}, res.header, res.rows)
    summary = {"suite": suite, "config": resolved, "properties": res.properties, "passed": res.passed,
               "details": res.details}
    _write(cfg.get("out") or f"{suite}.csv", table, stdout)
    _write(cfg.get("summary") or f"{suite}_summary.json", _dumps(summary), stdout)
    return 0 if res.passed else 2


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morreylab", description="Morrey-space regularity laboratory")
    sub = ap.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON config file; flags override its fields")
        sp.add_argument("--out", help="output path ('-' or absent: stdout)")
        return sp

    sp = add("classify", "regularity verdict for (n, b, p, lambda, s)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--p", help="number or exact rational 'a/b'")
    sp.add_argument("--lambda", dest="lambda_", metavar="LAMBDA", help="number or exact rational 'a/b'")
    sp.add_argument("--s", type=int)
    sp.add_argument("--exact", action="store_true", default=None, help="read decimal inputs as exact rationals")
    sp.set_defaults(func=cmd_classify)

    sp = add("diagram", "phase-diagram SVG and geometry CSV")
    sp.add_argument("--n", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--csv", help="geometry CSV path (default: next to --out)")
    sp.add_argument("--query", help="'p,lambda' point to mark with C and CA_s")
    sp.set_defaults(func=cmd_diagram)

    sp = add("norm", "evaluate a norm or seminorm of a catalog function")
    sp.add_argument("--kind", choices=NORM_KINDS)
    sp.add_argument("--n", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--h", type=float)
    sp.add_argument("--half-width", dest="half_width", type=float)
    sp.add_argument("--u", type=_json_arg, help="catalog selection (JSON or name)")
    sp.add_argument("--p", type=float)
    sp.add_argument("--lambda", dest="lambda_", metavar="LAMBDA", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--order", type=int)
    sp.add_argument("--R", type=float)
    sp.add_argument("--eval-region", dest="eval_region", type=_json_arg, help="Region dict or cube half-width")
    sp.add_argument("--pair-budget", dest="pair_budget", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_norm)

    sp = add("symbol", "ellipticity constant and cofactor identity")
    sp.add_argument("--operator", choices=("laplace", "polyharmonic", "wave", "lame", "second_order"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_symbol)

    sp = add("kernel-check", "kernel homogeneity, mean-zero and surface terms")
    sp.add_argument("--family", choices=("laplace", "polyharmonic", "scaled_scalar", "cofactor"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--alpha", type=_json_arg, help="JSON list, e.g. [2,0,0]")
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_kernel_check)

    sp = add("represent", "representation-formula residual per refinement")
    sp.add_argument("--family", choices=("laplace", "polyharmonic", "scaled_scalar", "cofactor"))
    sp.add_argument("--operator", choices=("laplace", "polyharmonic", "lame", "second_order"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--u", type=_json_arg)
    sp.add_argument("--a", type=_json_arg, help="scalar coefficient multiplying the operator")
    sp.add_argument("--alpha", type=_json_arg)
    sp.add_argument("--h", type=_json_arg, help="JSON list of spacings")
    sp.add_argument("--half-width", dest="half_width", type=float)
    sp.add_argument("--eval-half-width", dest="eval_half_width", type=float)
    sp.add_argument("--p", type=float)
    sp.set_defaults(func=cmd_represent)

    sp = add("verify", "run a property suite")
    sp.add_argument("--suite", choices=sorted(harness.SUITES))
    sp.add_argument("--summary", help="JSON summary path (default: <suite>_summary.json)")
    sp.set_defaults(func=cmd_verify)
    return ap


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if not getattr(args, "func", None):
        parser.print_usage(stderr)
        return 1
    if hasattr(args, "lambda_"):
        args.__dict__["lambda"] = args.__dict__.pop("lambda_")
    try:
        return args.func(args, stdout)
    except ValidationError as exc:
        for e in exc.errors:
            stderr.write(f"error: {e}\n")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
