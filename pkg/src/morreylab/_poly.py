"""Sparse multivariate polynomials as ``{exponent tuple: coefficient}`` dicts."""
from __future__ import annotations

import itertools

import numpy as np

Poly = dict


def const(n: int, c: float) -> Poly:
    return {(0,) * n: float(c)} if c else {}


def var(n: int, i: int, c: float = 1.0) -> Poly:
    e = [0] * n
    e[i] = 1
    return {tuple(e): float(c)}


def add(*ps: Poly) -> Poly:
    out: Poly = {}
    for p in ps:
        for e, c in p.items():
            out[e] = out.get(e, 0.0) + c
    return {e: c for e, c in out.items() if c != 0.0}


def scale(p: Poly, c: float) -> Poly:
    if c == 0:
        return {}
    return {e: c * v for e, v in p.items()}


def mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for (e1, c1), (e2, c2) in itertools.product(p.items(), q.items()):
        e = tuple(a + b for a, b in zip(e1, e2))
        out[e] = out.get(e, 0.0) + c1 * c2
    return {e: c for e, c in out.items() if c != 0.0}


def power(p: Poly, k: int, n: int) -> Poly:
    out = const(n, 1.0)
    for _ in range(k):
        out = mul(out, p)
    return out


def diff(p: Poly, i: int) -> Poly:
    out: Poly = {}
    for e, c in p.items():
        if e[i]:
            f = list(e)
            f[i] -= 1
            out[tuple(f)] = out.get(tuple(f), 0.0) + c * e[i]
    return out


def degree(p: Poly) -> int:
    return max((sum(e) for e in p), default=0)


def evaluate(p: Poly, x: np.ndarray) -> np.ndarray:
    """Evaluate at points ``x`` of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    if not p:
        return out
    top = max(max(e) for e in p)
    powers = [[np.ones(x.shape[:-1])] for _ in range(x.shape[-1])]
    for i in range(x.shape[-1]):
        for _ in range(top):
            powers[i].append(powers[i][-1] * x[..., i])
    for e, c in sorted(p.items()):
        term = np.full(x.shape[:-1], c)
        for i, k in enumerate(e):
            if k:
                term = term * powers[i][k]
        out = out + term
    return out


def max_abs_coeff(p: Poly) -> float:
    return max((abs(c) for c in p.values()), default=0.0)


def determinant(M: list) -> Poly:
    """Leibniz expansion of a square matrix of polynomials."""
    m = len(M)
    out: Poly = {}
    for perm in itertools.permutations(range(m)):
        sign = _perm_sign(perm)
        term = None
        for r, c in enumerate(perm):
            term = M[r][c] if term is None else mul(term, M[r][c])
            if not term:
                break
        if term:
            out = add(out, scale(term, sign))
    return out


def _perm_sign(perm) -> int:
    sign, seen = 1, list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def cofactors(M: list, n: int) -> list:
    """Polynomial cofactor matrix ``L_jk = (-1)**(j+k) det(minor_jk)`` in ``n`` variables."""
    m = len(M)
    if m == 1:
        return [[const(n, 1.0)]]
    out = []
    for j in range(m):
        row = []
        for k in range(m):
            minor = [[M[r][c] for c in range(m) if c != k] for r in range(m) if r != j]
            row.append(scale(determinant(minor), (-1) ** (j + k)))
        out.append(row)
    return out
