"""Vector fields, operator fields and the generalized torsion tower.

The level-1 torsion of an operator field ``A`` is computed from the
coordinate expansion

    T^i_jk = sum_l [ A^l_j d_l A^i_k - A^l_k d_l A^i_j
                     - A^i_l (d_j A^l_k - d_k A^l_j) ]

and every higher level is obtained by the pointwise quadratic recursion

    T'^i_jk = (A^2)^i_a T^a_jk + T^i_ab A^a_j A^b_k
              - A^i_a (T^a_jb A^b_k + T^a_bk A^b_j)

which is the index form of  A^2 T(X,Y) + T(AX,AY) - A(T(X,AY) + T(AX,Y)).
Entry derivatives are exact (symbolic); all contractions are numeric and
batched over sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    ChainConditionError,
    ChartMismatchError,
    DimensionMismatchError,
    PreconditionError,
)
from .expr import (
    Chart,
    Expr,
    SampleDomain,
    add,
    as_point,
    const,
    diff,
    eval_at,
    eval_many,
    mul,
    sample_points,
    sub,
)

__all__ = [
    "VectorFieldExpr",
    "OperatorBase",
    "OperatorField",
    "LinCombOperator",
    "ProductOperator",
    "PowerOperator",
    "PolyOperator",
    "TorsionTensor",
    "OperatorAtPoint",
    "VanishingReport",
    "identity_operator",
    "lie_bracket",
    "apply",
    "nijenhuis_at",
    "level_up",
    "torsion_at",
    "torsion_many",
    "is_vanishing",
    "eigenchain_formula_rhs",
]


# ---------------------------------------------------------------------------
# symbolic fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorFieldExpr:
    """A vector field X = X^i d/dx^i with symbolic components."""

    chart: Chart
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.chart.dim:
            raise DimensionMismatchError(
                f"{len(comps)} components on a {self.chart.dim}-dim chart")
        object.__setattr__(self, "components", comps)

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([eval_many(c, pts) for c in self.components], axis=1)

    def at(self, point) -> np.ndarray:
        p = as_point(self.chart, point)
        return self.eval_many(p[None, :])[0]


def lie_bracket(x: VectorFieldExpr, y: VectorFieldExpr) -> VectorFieldExpr:
    """Commutator [X, Y]^i = X^j d_j Y^i - Y^j d_j X^i, symbolically."""
    if x.chart != y.chart:
        raise ChartMismatchError("lie_bracket requires fields on the same chart")
    n = x.chart.dim
    comps = []
    for i in range(n):
        acc: Expr = const(0)
        for j in range(n):
            acc = add(acc, mul(x.components[j], diff(y.components[i], j)))
            acc = sub(acc, mul(y.components[j], diff(x.components[i], j)))
        comps.append(acc)
    return VectorFieldExpr(x.chart, tuple(comps))


def apply(a: "OperatorField", x: VectorFieldExpr) -> VectorFieldExpr:
    """Symbolic image (AX)^i = A^i_j X^j."""
    if a.chart != x.chart:
        raise ChartMismatchError("apply requires operator and field on the same chart")
    n = a.chart.dim
    comps = []
    for i in range(n):
        acc: Expr = const(0)
        for j in range(n):
            acc = add(acc, mul(a.entries[i][j], x.components[j]))
        comps.append(acc)
    return VectorFieldExpr(a.chart, tuple(comps))


# ---------------------------------------------------------------------------
# operator fields and their 1-jets
# ---------------------------------------------------------------------------

class OperatorBase:
    """Anything that can produce entry values and entry derivatives at points.

    ``jet_many(pts)`` returns ``(A, dA)`` with ``A[p, i, j] = A^i_j`` and
    ``dA[p, l, i, j] = d_l A^i_j`` for every sample point; that 1-jet is all
    the torsion tower needs.
    """

    chart: Chart

    def values_many(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jet_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def at(self, point) -> "OperatorAtPoint":
        p = as_point(self.chart, point)
        return OperatorAtPoint(self.values_many(p[None, :])[0], p)


@dataclass(frozen=True)
class OperatorField(OperatorBase):
    """An (1,1)-tensor field as an n-by-n matrix of symbolic entries.

    Row index is the output component, column index the input component.
    """

    chart: Chart
    entries: tuple[tuple[Expr, ...], ...]

    def __post_init__(self):
        n = self.chart.dim
        rows = tuple(tuple(row) for row in self.entries)
        if len(rows) != n or any(len(r) != n for r in rows):
            raise DimensionMismatchError(f"entries must form a {n}x{n} matrix")
        object.__setattr__(self, "entries", rows)

    @cached_property
    def _entry_derivatives(self) -> tuple:
        n = self.chart.dim
        return tuple(
            tuple(tuple(diff(self.entries[i][j], l) for j in range(n)) for i in range(n))
            for l in range(n)
        )

    def values_many(self, pts: np.ndarray) -> np.ndarray:
        n = self.chart.dim
        m = np.empty((pts.shape[0], n, n))
        for i in range(n):
            for j in range(n):
                m[:, i, j] = eval_many(self.entries[i][j], pts)
        return m

    def jet_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.chart.dim
        vals = self.values_many(pts)
        derivs = np.empty((pts.shape[0], n, n, n))
        dmat = self._entry_derivatives
        for l in range(n):
            for i in range(n):
                for j in range(n):
                    derivs[:, l, i, j] = eval_many(dmat[l][i][j], pts)
        return vals, derivs


def identity_operator(chart: Chart) -> OperatorField:
    n = chart.dim
    return OperatorField(
        chart,
        tuple(tuple(const(1 if i == j else 0) for j in range(n)) for i in range(n)),
    )


@dataclass(frozen=True)
class LinCombOperator(OperatorBase):
    """f_1 K_1 + ... + f_r K_r with scalar fields f_k; jets by the product rule."""

    chart: Chart
    terms: tuple[tuple[Expr, OperatorBase], ...]

    def __post_init__(self):
        for _, op in self.terms:
            if op.chart != self.chart:
                raise ChartMismatchError("all terms must share one chart")

    def values_many(self, pts):
        out = None
        for coeff, op in self.terms:
            c = eval_many(coeff, pts)[:, None, None]
            v = c * op.values_many(pts)
            out = v if out is None else out + v
        return out

    def jet_many(self, pts):
        n = self.chart.dim
        vals = np.zeros((pts.shape[0], n, n))
        derivs = np.zeros((pts.shape[0], n, n, n))
        for coeff, op in self.terms:
            c = eval_many(coeff, pts)
            dc = np.stack([eval_many(diff(coeff, l), pts) for l in range(n)], axis=1)
            v, dv = op.jet_many(pts)
            vals += c[:, None, None] * v
            derivs += c[:, None, None, None] * dv
            derivs += dc[:, :, None, None] * v[:, None, :, :]
        return vals, derivs


@dataclass(frozen=True)
class ProductOperator(OperatorBase):
    """Composition (left . right); d(LR) = dL R + L dR."""

    left: OperatorBase
    right: OperatorBase

    def __post_init__(self):
        if self.left.chart != self.right.chart:
            raise ChartMismatchError("product factors must share one chart")
        object.__setattr__(self, "chart", self.left.chart)

    chart: Chart = None  # set in __post_init__

    def values_many(self, pts):
        return self.left.values_many(pts) @ self.right.values_many(pts)

    def jet_many(self, pts):
        lv, ld = self.left.jet_many(pts)
        rv, rd = self.right.jet_many(pts)
        vals = lv @ rv
        derivs = np.einsum("plij,pjk->plik", ld, rv) + np.einsum("pij,pljk->plik", lv, rd)
        return vals, derivs


@dataclass(frozen=True)
class PowerOperator(OperatorBase):
    """A^k for k >= 0 (A^0 is the identity)."""

    base: OperatorBase
    exponent: int

    def __post_init__(self):
        if self.exponent < 0:
            raise ValueError("exponent must be >= 0")
        object.__setattr__(self, "chart", self.base.chart)

    chart: Chart = None

    def values_many(self, pts):
        n = self.chart.dim
        out = np.broadcast_to(np.eye(n), (pts.shape[0], n, n)).copy()
        v = self.base.values_many(pts)
        for _ in range(self.exponent):
            out = out @ v
        return out

    def jet_many(self, pts):
        n = self.chart.dim
        v, dv = self.base.jet_many(pts)
        vals = np.broadcast_to(np.eye(n), (pts.shape[0], n, n)).copy()
        derivs = np.zeros((pts.shape[0], n, n, n))
        # d(A^k) = d(A^(k-1)) A + A^(k-1) dA
        for _ in range(self.exponent):
            derivs = np.einsum("plij,pjk->plik", derivs, v) \
                + np.einsum("pij,pljk->plik", vals, dv)
            vals = vals @ v
        return vals, derivs


@dataclass(frozen=True)
class PolyOperator(OperatorBase):
    """P(A) = sum_k c_k(x) A^k with scalar-field coefficients."""

    base: OperatorBase
    coeffs: tuple[Expr, ...]

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("need at least the degree-0 coefficient")
        object.__setattr__(self, "chart", self.base.chart)

    chart: Chart = None

    def values_many(self, pts):
        n = self.chart.dim
        v = self.base.values_many(pts)
        power = np.broadcast_to(np.eye(n), (pts.shape[0], n, n)).copy()
        out = np.zeros_like(power)
        for k, c in enumerate(self.coeffs):
            cv = eval_many(c, pts)[:, None, None]
            out += cv * power
            if k + 1 < len(self.coeffs):
                power = power @ v
        return out

    def jet_many(self, pts):
        n = self.chart.dim
        v, dv = self.base.jet_many(pts)
        power = np.broadcast_to(np.eye(n), (pts.shape[0], n, n)).copy()
        dpower = np.zeros((pts.shape[0], n, n, n))
        vals = np.zeros_like(power)
        derivs = np.zeros_like(dpower)
        for k, c in enumerate(self.coeffs):
            cv = eval_many(c, pts)
            dc = np.stack([eval_many(diff(c, l), pts) for l in range(n)], axis=1)
            vals += cv[:, None, None] * power
            derivs += cv[:, None, None, None] * dpower
            derivs += dc[:, :, None, None] * power[:, None, :, :]
            if k + 1 < len(self.coeffs):
                dpower = np.einsum("plij,pjk->plik", dpower, v) \
                    + np.einsum("pij,pljk->plik", power, dv)
                power = power @ v
        return vals, derivs


# ---------------------------------------------------------------------------
# pointwise tensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OperatorAtPoint:
    """The value A(p) of an operator field at one point."""

    matrix: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError("matrix must be square")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix entries must be finite")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))


@dataclass(frozen=True, eq=False)
class TorsionTensor:
    """Pointwise rank-(1,2) torsion components T^i_jk, skew in (j, k).

    Tensors produced by the torsion tower are exactly skew-symmetric by
    construction (the raw contraction is symmetrized in floating point).
    """

    level: int
    point: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.ndim != 3 or len(set(comps.shape)) != 1:
            raise DimensionMismatchError("components must have shape (n, n, n)")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.components)))


def _skew(arr: np.ndarray) -> np.ndarray:
    # exact in IEEE arithmetic: out[..., j, k] = -out[..., k, j]
    return 0.5 * (arr - arr.swapaxes(-1, -2))


def nijenhuis_from_jets(vals: np.ndarray, derivs: np.ndarray) -> np.ndarray:
    t1 = np.einsum("plj,plik->pijk", vals, derivs)
    t2 = np.einsum("plk,plij->pijk", vals, derivs)
    t3 = np.einsum("pil,pjlk->pijk", vals, derivs)
    t4 = np.einsum("pil,pklj->pijk", vals, derivs)
    return _skew(t1 - t2 - t3 + t4)


def nijenhuis_many(a: OperatorBase, pts: np.ndarray) -> np.ndarray:
    vals, derivs = a.jet_many(pts)
    return nijenhuis_from_jets(vals, derivs)


def level_up_many(torsions: np.ndarray, vals: np.ndarray) -> np.ndarray:
    sq = vals @ vals
    raw = np.einsum("pab,pbjk->pajk", sq, torsions)
    # T(AX, AY): contract both arguments, one factor at a time
    arg1 = np.einsum("piab,paj->pijb", torsions, vals)
    raw += np.einsum("pijb,pbk->pijk", arg1, vals)
    # A T(X, AY)
    left = np.einsum("pia,pajb->pijb", vals, torsions)
    raw -= np.einsum("pijb,pbk->pijk", left, vals)
    # A T(AX, Y)
    left = np.einsum("pia,pabk->pibk", vals, torsions)
    raw -= np.einsum("pibk,pbj->pijk", left, vals)
    return _skew(raw)


def tower_from_jets(vals: np.ndarray, derivs: np.ndarray, m: int) -> np.ndarray:
    torsions = nijenhuis_from_jets(vals, derivs)
    for _ in range(m - 1):
        torsions = level_up_many(torsions, vals)
    return torsions


def residuals_from_jets(vals: np.ndarray, derivs: np.ndarray, m: int) -> np.ndarray:
    torsions = tower_from_jets(vals, derivs, m)
    tor_norm = np.max(np.abs(torsions), axis=(1, 2, 3))
    op_norm = np.max(np.abs(vals), axis=(1, 2))
    return tor_norm / (1.0 + op_norm ** (2 * m - 1))


def torsion_many(a: OperatorBase, m: int, pts: np.ndarray) -> np.ndarray:
    """Level-m torsion components at every row of ``pts``; shape (N, n, n, n)."""
    if m < 1:
        raise ValueError("torsion level must be >= 1")
    vals, derivs = a.jet_many(pts)
    return tower_from_jets(vals, derivs, m)


def nijenhuis_at(a: OperatorBase, point) -> TorsionTensor:
    """Level-1 (Nijenhuis) torsion of ``a`` at one point."""
    p = as_point(a.chart, point)
    comps = nijenhuis_many(a, p[None, :])[0]
    return TorsionTensor(1, p, comps)


def level_up(torsion: TorsionTensor, ap: OperatorAtPoint) -> TorsionTensor:
    """One step of the tower recursion at a point (level m-1 -> m, m >= 2)."""
    if torsion.components.shape[0] != ap.matrix.shape[0]:
        raise DimensionMismatchError("torsion and operator dimensions differ")
    if torsion.point.shape != ap.point.shape or not np.array_equal(torsion.point, ap.point):
        raise PreconditionError("torsion and operator must be evaluated at the same point")
    comps = level_up_many(torsion.components[None], ap.matrix[None])[0]
    return TorsionTensor(torsion.level + 1, torsion.point, comps)


def torsion_at(a: OperatorBase, m: int, point) -> TorsionTensor:
    """Level-m torsion of ``a`` at one point (m >= 1)."""
    p = as_point(a.chart, point)
    comps = torsion_many(a, m, p[None, :])[0]
    return TorsionTensor(m, p, comps)


# ---------------------------------------------------------------------------
# vanishing verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VanishingReport:
    """Normalized residual sweep for one torsion level over a sample domain."""

    level: int
    n_points: int
    seed: int
    tol_rel: float
    max_residual: float
    vanishing: bool
    worst_point: np.ndarray


def torsion_residuals(a: OperatorBase, m: int, pts: np.ndarray) -> np.ndarray:
    """max |T^(m)| / (1 + max|A|^(2m-1)) per point; scale-free residuals."""
    vals, derivs = a.jet_many(pts)
    return residuals_from_jets(vals, derivs, m)


def is_vanishing(a: OperatorBase, m: int, domain: SampleDomain,
                 n_pts: int, tol_rel: float) -> VanishingReport:
    """Probabilistic zero test for the level-m torsion over ``domain``."""
    if n_pts < 1:
        raise ValueError("n_pts must be >= 1")
    pts = sample_points(domain, n_pts)
    residuals = torsion_residuals(a, m, pts)
    worst = int(np.argmax(residuals))
    max_residual = float(residuals[worst])
    return VanishingReport(
        level=m,
        n_points=n_pts,
        seed=domain.seed,
        tol_rel=tol_rel,
        max_residual=max_residual,
        vanishing=bool(max_residual <= tol_rel),
        worst_point=pts[worst],
    )


# ---------------------------------------------------------------------------
# generalized eigenvector formula
# ---------------------------------------------------------------------------

def eigenchain_formula_rhs(a: OperatorBase,
                           chain_x: tuple[Expr, Sequence[VectorFieldExpr]],
                           chain_y: tuple[Expr, Sequence[VectorFieldExpr]],
                           m: int, point) -> np.ndarray:
    """Double binomial sum over a pair of Jordan chains, evaluated at a point.

    ``chain_x = (mu, [X_1, ..., X_alpha])`` must satisfy
    ``A X_g = mu X_g + X_(g-1)`` (``X_0 = 0``) numerically at the point; the
    analogous condition holds for ``chain_y``.  Returns

        sum_(i,j) (-1)^(i+j) C(m,i) C(m,j)
                  (A - mu I)^(m-i) (A - nu I)^(m-j) [X_(alpha-i), Y_(beta-j)]

    as a coefficient vector in the natural frame.
    """
    if m < 2:
        raise ValueError("the chain formula applies for levels m >= 2")
    p = as_point(a.chart, point)
    mu, xs = chain_x
    nu, ys = chain_y
    ap = a.values_many(p[None, :])[0]
    mu_v = eval_at(mu, p)
    nu_v = eval_at(nu, p)
    _check_chain(ap, mu_v, xs, p)
    _check_chain(ap, nu_v, ys, p)

    n = a.chart.dim
    m_mu = ap - mu_v * np.eye(n)
    m_nu = ap - nu_v * np.eye(n)
    pow_mu = _matrix_powers(m_mu, m)
    pow_nu = _matrix_powers(m_nu, m)

    alpha, beta = len(xs), len(ys)
    bracket_cache: dict[tuple[int, int], np.ndarray] = {}
    total = np.zeros(n)
    for i in range(m + 1):
        if alpha - i < 1:
            continue
        for j in range(m + 1):
            if beta - j < 1:
                continue
            key = (alpha - i, beta - j)
            if key not in bracket_cache:
                bracket_cache[key] = lie_bracket(xs[key[0] - 1], ys[key[1] - 1]).at(p)
            sign = -1 if (i + j) % 2 else 1
            coeff = sign * math.comb(m, i) * math.comb(m, j)
            total += coeff * (pow_mu[m - i] @ pow_nu[m - j] @ bracket_cache[key])
    return total


def _matrix_powers(mat: np.ndarray, top: int) -> list[np.ndarray]:
    powers = [np.eye(mat.shape[0])]
    for _ in range(top):
        powers.append(powers[-1] @ mat)
    return powers


def _check_chain(ap: np.ndarray, lam: float,
                 chain: Sequence[VectorFieldExpr], p: np.ndarray) -> None:
    if not chain:
        raise ChainConditionError("chain must contain at least one field")
    prev = np.zeros(ap.shape[0])
    scale = (1.0 + np.max(np.abs(ap)))
    for g, field in enumerate(chain, start=1):
        xv = field.at(p)
        scale_g = scale * (1.0 + np.max(np.abs(xv)))
        resid = np.max(np.abs(ap @ xv - lam * xv - prev))
        if resid > 1e-8 * scale_g:
            raise ChainConditionError(
                f"chain relation fails at slot {g}: residual {resid:.3e}")
        prev = xv
