"""Shared test utilities: definition-based oracles and random generators.

The oracles here deliberately avoid the production index-contraction code
paths: torsions are assembled from symbolic brackets and operator
applications exactly as defined, then evaluated pointwise.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from torsionlab.expr import Chart, Expr, Var, const, eval_at
from torsionlab.fields import OperatorField, VectorFieldExpr, apply, lie_bracket


def basis_field(chart: Chart, index: int) -> VectorFieldExpr:
    comps = tuple(const(1 if i == index else 0) for i in range(chart.dim))
    return VectorFieldExpr(chart, comps)


def tau_defn(a: OperatorField, x: VectorFieldExpr, y: VectorFieldExpr) -> VectorFieldExpr:
    """Level-1 torsion straight from its defining formula (symbolic)."""
    ax, ay = apply(a, x), apply(a, y)
    term1 = apply(a, apply(a, lie_bracket(x, y)))
    term2 = lie_bracket(ax, ay)
    term3 = apply(a, lie_bracket(x, ay))
    term4 = apply(a, lie_bracket(ax, y))
    comps = tuple(
        term1.components[i] + term2.components[i] - term3.components[i] - term4.components[i]
        for i in range(a.chart.dim))
    return VectorFieldExpr(a.chart, comps)


def haantjes_defn(a: OperatorField, x: VectorFieldExpr, y: VectorFieldExpr) -> VectorFieldExpr:
    """Level-2 torsion from its defining formula, built on :func:`tau_defn`."""
    ax, ay = apply(a, x), apply(a, y)
    term1 = apply(a, apply(a, tau_defn(a, x, y)))
    term2 = tau_defn(a, ax, ay)
    term3 = apply(a, tau_defn(a, x, ay))
    term4 = apply(a, tau_defn(a, ax, y))
    comps = tuple(
        term1.components[i] + term2.components[i] - term3.components[i] - term4.components[i]
        for i in range(a.chart.dim))
    return VectorFieldExpr(a.chart, comps)


def nijenhuis_oracle(a: OperatorField, point) -> np.ndarray:
    """T^i_jk via the definition applied to all basis pairs, shape (n, n, n)."""
    n = a.chart.dim
    out = np.zeros((n, n, n))
    for j in range(n):
        for k in range(j + 1, n):
            val = tau_defn(a, basis_field(a.chart, j), basis_field(a.chart, k)).at(point)
            out[:, j, k] = val
            out[:, k, j] = -val
    return out


def haantjes_oracle(a: OperatorField, point) -> np.ndarray:
    n = a.chart.dim
    out = np.zeros((n, n, n))
    for j in range(n):
        for k in range(j + 1, n):
            val = haantjes_defn(a, basis_field(a.chart, j), basis_field(a.chart, k)).at(point)
            out[:, j, k] = val
            out[:, k, j] = -val
    return out


def central_difference(e: Expr, var: int, point, scale: float = 1e-6) -> float:
    p = np.asarray(point, dtype=float)
    h = scale * max(1.0, abs(p[var]))
    hi, lo = p.copy(), p.copy()
    hi[var] += h
    lo[var] -= h
    return (eval_at(e, hi) - eval_at(e, lo)) / (2 * h)


def random_poly_expr(chart: Chart, rng: np.random.Generator, max_terms: int = 3) -> Expr:
    """Random polynomial of degree <= 2 with small rational coefficients."""
    def coeff() -> Expr:
        num = int(rng.integers(-6, 7)) or 2
        return const(Fraction(num, int(rng.integers(1, 3))))

    e: Expr = coeff()
    for _ in range(int(rng.integers(1, max_terms + 1))):
        term = coeff() * Var(int(rng.integers(0, chart.dim)))
        if rng.random() < 0.4:
            term = term * Var(int(rng.integers(0, chart.dim)))
        e = e + term
    return e


def random_operator(chart: Chart, rng: np.random.Generator) -> OperatorField:
    n = chart.dim
    entries = tuple(
        tuple(random_poly_expr(chart, rng, max_terms=2) for _ in range(n))
        for _ in range(n))
    return OperatorField(chart, entries)


def random_vector_field(chart: Chart, rng: np.random.Generator) -> VectorFieldExpr:
    return VectorFieldExpr(
        chart, tuple(random_poly_expr(chart, rng, max_terms=2) for _ in range(chart.dim)))


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b)) / scale)
