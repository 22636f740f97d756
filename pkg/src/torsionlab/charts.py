"""Coordinate changes, pushforwards, one-form potentials and block detection.

A coordinate change carries an operator field by similarity with its
Jacobian, K^(y) = J A J^(-1); exact polynomial one-forms (the annihilator
generators of characteristic distributions) are integrated along coordinate
axes to produce the separating coordinate functions; block structure of the
transported matrices is verified or detected over sample points.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (
    ChartMismatchError,
    DimensionMismatchError,
    NonPolynomialError,
    NotClosedError,
    SingularJacobianError,
)
from .expr import (
    Chart,
    Const,
    Add,
    Sub,
    Mul,
    Neg,
    Pow,
    Var,
    Expr,
    add,
    as_point,
    const,
    diff,
    div,
    eval_many,
    mul,
    neg,
    pow_int,
    sub,
    subst_vars,
)
from .fields import OperatorBase, OperatorField

__all__ = [
    "DiffeoChart",
    "OneFormExpr",
    "BlockPartition",
    "verify_diffeo",
    "jacobian_at",
    "jacobian_many",
    "pushforward_at",
    "pushforward_many",
    "pushforward_field",
    "integrate_exact_one_form",
    "detect_blocks",
]

JACOBIAN_DET_EPS = 1e-8
CLOSED_TOL = 1e-10
CLOSED_PROBES = 20


@dataclass(frozen=True)
class DiffeoChart:
    """A coordinate map y(x) given componentwise, with an optional inverse."""

    src: Chart
    dst: Chart
    forward: tuple[Expr, ...]
    inverse: tuple[Expr, ...] | None = None

    def __post_init__(self):
        if len(self.forward) != self.dst.dim or self.src.dim != self.dst.dim:
            raise DimensionMismatchError("forward map must have one component per coordinate")
        object.__setattr__(self, "forward", tuple(self.forward))
        if self.inverse is not None:
            if len(self.inverse) != self.src.dim:
                raise DimensionMismatchError("inverse map must have one component per coordinate")
            object.__setattr__(self, "inverse", tuple(self.inverse))

    def forward_many(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([eval_many(f, pts) for f in self.forward], axis=1)


@dataclass(frozen=True)
class OneFormExpr:
    """A one-form w = w_i dx^i with symbolic components."""

    chart: Chart
    components: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.components) != self.chart.dim:
            raise DimensionMismatchError("one component per coordinate required")
        object.__setattr__(self, "components", tuple(self.components))


@dataclass(frozen=True)
class BlockPartition:
    """Ordered sizes of contiguous diagonal blocks."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def block_of(self) -> np.ndarray:
        """Block index of each coordinate."""
        out = np.empty(self.dim, dtype=int)
        start = 0
        for b, size in enumerate(self.sizes):
            out[start:start + size] = b
            start += size
        return out


# ---------------------------------------------------------------------------
# Jacobians and pushforwards
# ---------------------------------------------------------------------------

def verify_diffeo(c: DiffeoChart, pts: np.ndarray, tol: float = 1e-8) -> float:
    """Check the chart invariants at sample points.

    The forward Jacobian must be invertible (|det| above the determinant
    guard) and, when an inverse map is present, x(y(p)) must return p within
    ``tol``.  Returns the worst round-trip deviation (0.0 without an
    inverse); raises :class:`SingularJacobianError` on a degenerate Jacobian.
    """
    jac = jacobian_many(c, pts)
    dets = np.abs(np.linalg.det(jac))
    if np.any(dets <= JACOBIAN_DET_EPS):
        idx = int(np.argmin(dets))
        raise SingularJacobianError(
            f"|det J| = {dets[idx]:.3e} at point {pts[idx].tolist()}")
    if c.inverse is None:
        return 0.0
    ys = c.forward_many(pts)
    back = np.stack([eval_many(x, ys) for x in c.inverse], axis=1)
    worst = float(np.max(np.abs(back - pts)))
    if worst > tol:
        raise ChartMismatchError(
            f"inverse map fails the round trip by {worst:.3e}")
    return worst


def jacobian_many(c: DiffeoChart, pts: np.ndarray) -> np.ndarray:
    n = c.src.dim
    jac = np.empty((pts.shape[0], n, n))
    for a in range(n):
        for i in range(n):
            jac[:, a, i] = eval_many(diff(c.forward[a], i), pts)
    return jac


def jacobian_at(c: DiffeoChart, point) -> np.ndarray:
    """J^a_i = dy^a/dx^i at a source point."""
    p = as_point(c.src, point)
    return jacobian_many(c, p[None, :])[0]


def pushforward_many(a: OperatorBase, c: DiffeoChart, pts: np.ndarray) -> np.ndarray:
    """J A J^(-1) at every source sample point (components in the y-frame)."""
    if a.chart != c.src:
        raise ChartMismatchError("operator must live on the source chart")
    jac = jacobian_many(c, pts)
    dets = np.linalg.det(jac)
    bad = np.abs(dets) <= JACOBIAN_DET_EPS
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SingularJacobianError(
            f"|det J| = {abs(dets[idx]):.3e} at point {pts[idx].tolist()}")
    vals = a.values_many(pts)
    return jac @ vals @ np.linalg.inv(jac)


def pushforward_at(a: OperatorBase, c: DiffeoChart, point) -> np.ndarray:
    p = as_point(c.src, point)
    return pushforward_many(a, c, p[None, :])[0]


def _symbolic_inverse(entries: Sequence[Sequence[Expr]]) -> list[list[Expr]]:
    """Adjugate-over-determinant inverse of a small symbolic matrix."""
    n = len(entries)

    def det(mat: list[list[Expr]]) -> Expr:
        if len(mat) == 1:
            return mat[0][0]
        acc: Expr = const(0)
        for col in range(len(mat)):
            minor = [row[:col] + row[col + 1:] for row in mat[1:]]
            term = mul(mat[0][col], det(minor))
            acc = add(acc, term) if col % 2 == 0 else add(acc, mul(const(-1), term))
        return acc

    full = [list(row) for row in entries]
    d = det(full)
    inv = [[const(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(full) if k != i]
            cof = det(minor)
            if (i + j) % 2 == 1:
                cof = mul(const(-1), cof)
            inv[j][i] = div(cof, d)
    return inv


def pushforward_field(a: OperatorField, c: DiffeoChart) -> OperatorField:
    """Symbolic operator field in destination coordinates.

    Requires the chart's inverse map: entries of J A J^(-1) are composed
    with x(y) to become expressions on the destination chart.
    """
    if c.inverse is None:
        raise ChartMismatchError("pushforward_field needs the inverse coordinate map")
    if a.chart != c.src:
        raise ChartMismatchError("operator must live on the source chart")
    n = c.src.dim
    jac = [[diff(c.forward[r], i) for i in range(n)] for r in range(n)]
    jinv = _symbolic_inverse(jac)
    prod = [[const(0)] * n for _ in range(n)]
    for r in range(n):
        for j in range(n):
            acc: Expr = const(0)
            for i in range(n):
                acc = add(acc, mul(jac[r][i], a.entries[i][j]))
            prod[r][j] = acc
    out = [[const(0)] * n for _ in range(n)]
    for r in range(n):
        for s in range(n):
            acc = const(0)
            for j in range(n):
                acc = add(acc, mul(prod[r][j], jinv[j][s]))
            out[r][s] = subst_vars(acc, tuple(c.inverse))
    return OperatorField(c.dst, tuple(tuple(row) for row in out))


# ---------------------------------------------------------------------------
# exact one-form integration
# ---------------------------------------------------------------------------

def _to_monomials(e: Expr) -> dict[tuple[int, ...], Fraction]:
    """Expand a polynomial expression into {exponent tuple: coefficient}."""
    if isinstance(e, Const):
        return {(): e.value} if e.value != 0 else {}
    if isinstance(e, Var):
        key = tuple(1 if i == e.index else 0 for i in range(e.index + 1))
        return {key: Fraction(1)}
    if isinstance(e, Add):
        return _merge(_to_monomials(e.left), _to_monomials(e.right), 1)
    if isinstance(e, Sub):
        return _merge(_to_monomials(e.left), _to_monomials(e.right), -1)
    if isinstance(e, Neg):
        return {k: -v for k, v in _to_monomials(e.arg).items()}
    if isinstance(e, Mul):
        left, right = _to_monomials(e.left), _to_monomials(e.right)
        out: dict[tuple[int, ...], Fraction] = {}
        for ka, va in left.items():
            for kb, vb in right.items():
                key = _mul_keys(ka, kb)
                out[key] = out.get(key, Fraction(0)) + va * vb
                if out[key] == 0:
                    del out[key]
        return out
    if isinstance(e, Pow):
        if e.exponent < 0:
            raise NonPolynomialError("negative power is not polynomial")
        out = {(): Fraction(1)}
        base = _to_monomials(e.base)
        for _ in range(e.exponent):
            nxt: dict[tuple[int, ...], Fraction] = {}
            for ka, va in out.items():
                for kb, vb in base.items():
                    key = _mul_keys(ka, kb)
                    nxt[key] = nxt.get(key, Fraction(0)) + va * vb
            out = {k: v for k, v in nxt.items() if v != 0}
        return out
    raise NonPolynomialError(f"{type(e).__name__} node is not polynomial")


def _mul_keys(ka: tuple[int, ...], kb: tuple[int, ...]) -> tuple[int, ...]:
    length = max(len(ka), len(kb))
    ka = ka + (0,) * (length - len(ka))
    kb = kb + (0,) * (length - len(kb))
    key = tuple(a + b for a, b in zip(ka, kb))
    while key and key[-1] == 0:
        key = key[:-1]
    return key


def _merge(a: dict, b: dict, sign: int) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, Fraction(0)) + sign * v
        if out[k] == 0:
            del out[k]
    return out


def _monomials_to_expr(mono: dict[tuple[int, ...], Fraction], dim: int) -> Expr:
    if not mono:
        return const(0)

    def monomial(key, coeff) -> Expr:
        term: Expr | None = None if coeff == 1 and any(key) else const(coeff)
        for v, exp in enumerate(key):
            if exp:
                factor = pow_int(Var(v), exp)
                term = factor if term is None else mul(term, factor)
        return term

    acc: Expr | None = None
    order = sorted(mono, key=lambda k: k + (0,) * (dim - len(k)), reverse=True)
    for key in order:
        coeff = mono[key]
        if acc is None:
            acc = monomial(key, coeff) if coeff > 0 else neg(monomial(key, -coeff))
        elif coeff > 0:
            acc = add(acc, monomial(key, coeff))
        else:
            acc = sub(acc, monomial(key, -coeff))
    return acc


def integrate_exact_one_form(w: OneFormExpr, probe_seed: int = 7_0915) -> Expr:
    """Potential F with dF = w and F(0) = 0, for closed polynomial one-forms.

    Closedness (d_i w_j = d_j w_i) is verified numerically at probe points
    before integrating along the coordinate axes from the origin; the result
    is re-verified against the components.  Raises :class:`NotClosedError`
    or :class:`NonPolynomialError`.
    """
    n = w.chart.dim
    monos = [_to_monomials(c) for c in w.components]

    rng = np.random.default_rng(probe_seed)
    probes = rng.uniform(-1.0, 1.0, size=(CLOSED_PROBES, n))
    for i in range(n):
        for j in range(i + 1, n):
            delta = eval_many(diff(w.components[j], i), probes) \
                - eval_many(diff(w.components[i], j), probes)
            if np.max(np.abs(delta)) > CLOSED_TOL:
                raise NotClosedError(
                    f"d_{i + 1} w_{j + 1} != d_{j + 1} w_{i + 1} "
                    f"(max deviation {np.max(np.abs(delta)):.3e})")

    # F(x) = sum_i  integral_0^{x_i} w_i(x_1, .., x_{i-1}, t, 0, .., 0) dt
    total: dict[tuple[int, ...], Fraction] = {}
    for i in range(n):
        for key, coeff in monos[i].items():
            padded = key + (0,) * (n - len(key))
            if any(padded[j] > 0 for j in range(i + 1, n)):
                continue  # vanishes on the segment where later coordinates are 0
            lifted = list(padded)
            lifted[i] += 1
            new_coeff = coeff / lifted[i]
            lifted_key = _mul_keys(tuple(lifted), ())
            total[lifted_key] = total.get(lifted_key, Fraction(0)) + new_coeff
            if total[lifted_key] == 0:
                del total[lifted_key]
    potential = _monomials_to_expr(total, n)

    for i in range(n):
        delta = eval_many(diff(potential, i), probes) - eval_many(w.components[i], probes)
        if np.max(np.abs(delta)) > CLOSED_TOL:
            raise NotClosedError(
                f"potential verification failed on component {i + 1} "
                f"(max deviation {np.max(np.abs(delta)):.3e})")
    return potential


# ---------------------------------------------------------------------------
# block structure
# ---------------------------------------------------------------------------

def detect_blocks(mats: Sequence[np.ndarray], hint: BlockPartition | None = None,
                  tol: float = 1e-8) -> tuple[BlockPartition, float]:
    """Find or verify a contiguous block-diagonal partition over sample matrices.

    With a ``hint``, returns it together with the largest off-block entry
    magnitude relative to the overall scale.  Without one, returns the finest
    contiguous partition whose off-block entries stay below ``tol * scale``
    for every supplied matrix.
    """
    stack = np.stack([np.asarray(m, dtype=float) for m in mats])
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise DimensionMismatchError("expected a sequence of square matrices")
    n = stack.shape[1]
    scale = max(1.0, float(np.max(np.abs(stack))))

    if hint is not None:
        if hint.dim != n:
            raise DimensionMismatchError("hint sizes do not sum to the dimension")
        block_of = hint.block_of()
        off = block_of[:, None] != block_of[None, :]
        residual = float(np.max(np.abs(stack[:, off]))) / scale if off.any() else 0.0
        return hint, residual

    coupled = np.max(np.abs(stack), axis=0) > tol * scale
    reach = np.arange(n)
    for i in range(n):
        for j in range(i + 1, n):
            if coupled[i, j] or coupled[j, i]:
                reach[i] = max(reach[i], j)
    sizes = []
    start = 0
    end = reach[0]
    for k in range(1, n + 1):
        if k > end:
            sizes.append(k - start)
            if k < n:
                start = k
                end = reach[k]
        elif k < n:
            end = max(end, reach[k])
    partition = BlockPartition(tuple(sizes))
    block_of = partition.block_of()
    off = block_of[:, None] != block_of[None, :]
    residual = float(np.max(np.abs(stack[:, off]))) / scale if off.any() else 0.0
    return partition, residual
