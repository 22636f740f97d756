"""Jacobians, pushforwards, one-form potentials and block detection."""

import numpy as np
import pytest

from helpers import rel_err
from torsionlab.charts import (
    BlockPartition,
    DiffeoChart,
    OneFormExpr,
    detect_blocks,
    integrate_exact_one_form,
    jacobian_at,
    pushforward_at,
    pushforward_field,
    pushforward_many,
    verify_diffeo,
)
from torsionlab.errors import NonPolynomialError, NotClosedError, SingularJacobianError
from torsionlab.expr import (
    Chart,
    SampleDomain,
    Var,
    const,
    eval_many,
    format_expr,
    parse_expr,
    sample_points,
)
from torsionlab.fields import OperatorField, identity_operator, torsion_many

CH2 = Chart(2)
CH3 = Chart(3)
CH7 = Chart(7)


def op_from_strings(chart, rows):
    return OperatorField(chart, tuple(tuple(parse_expr(s, chart) for s in row) for row in rows))


def identity_chart(chart):
    return DiffeoChart(src=chart, dst=chart,
                       forward=tuple(Var(i) for i in range(chart.dim)),
                       inverse=tuple(Var(i) for i in range(chart.dim)))


# ---------------------------------------------------------------------------
# jacobians
# ---------------------------------------------------------------------------

def test_jacobian_identity_chart():
    c = identity_chart(CH3)
    assert np.array_equal(jacobian_at(c, (0.3, 0.4, 0.5)), np.eye(3))


def test_fixture_charts_are_diffeomorphisms(lta, lfa1):
    for man in (lta, lfa1):
        pts = sample_points(man.domain, 25)
        worst = verify_diffeo(man.charts["y"], pts, tol=1e-8)
        assert worst <= 1e-8


def test_verify_diffeo_rejects_degenerate_map():
    c = DiffeoChart(src=CH2, dst=CH2, forward=(Var(0), Var(0)))
    with pytest.raises(SingularJacobianError):
        verify_diffeo(c, np.array([[0.5, 0.5]]))


def test_jacobian_lta_chart_rows(lta):
    c = lta.charts["y"]
    p = sample_points(lta.domain, 1)[0]
    jac = jacobian_at(c, p)
    expected_const = np.array([
        [1, 1, 0, 1, 0],
        [1, -1, 0, -1, 0],
        [0, 0, 1, 0, 1],
        [0, 0, 1, 0, 0],
    ])
    assert np.array_equal(jac[:4], expected_const)
    # row 5 of y5 = x1 + x4 + x3 x5 depends on the point
    assert np.allclose(jac[4], [1, 0, p[4], 1, p[2]])


def test_jacobian_row_for_cubic_minus_x6():
    # y6 = x1^3/3 - x6 has gradient ((x1)^2, 0, 0, 0, 0, -1, 0)
    c = DiffeoChart(
        src=CH7, dst=Chart(7, tuple(f"y{i}" for i in range(1, 8))),
        forward=tuple(parse_expr(s, CH7) for s in
                      ["x1", "x2", "x3", "x4", "x5", "x1^3/3 - x6", "x7"]))
    p = (1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    jac = jacobian_at(c, p)
    assert np.allclose(jac[5], [1.5**2, 0, 0, 0, 0, -1, 0])


# ---------------------------------------------------------------------------
# pushforwards
# ---------------------------------------------------------------------------

def test_pushforward_identity_chart():
    a = op_from_strings(CH2, [["x1", "1"], ["x2", "x1*x2"]])
    p = (0.7, 1.3)
    assert np.allclose(pushforward_at(a, identity_chart(CH2), p),
                       a.values_many(np.array([p]))[0])


def test_pushforward_matches_printed_lta_matrices(lta):
    chart = lta.charts["y"]
    pts = sample_points(lta.domain, 30)
    ys = chart.forward_many(pts)
    for name, op in lta.operators.items():
        mats = pushforward_many(op, chart, pts)
        gold = lta.pushforward_golden["y"][name]
        expected = np.empty_like(mats)
        for i in range(5):
            for j in range(5):
                expected[:, i, j] = eval_many(gold[i][j], ys)
        assert rel_err(mats, expected) <= 1e-8


def test_pushforward_matches_printed_lfa1_matrices(lfa1):
    chart = lfa1.charts["y"]
    pts = sample_points(lfa1.domain, 30)
    ys = chart.forward_many(pts)
    for name, op in lfa1.operators.items():
        mats = pushforward_many(op, chart, pts)
        gold = lfa1.pushforward_golden["y"][name]
        expected = np.empty_like(mats)
        for i in range(7):
            for j in range(7):
                expected[:, i, j] = eval_many(gold[i][j], ys)
        assert rel_err(mats, expected) <= 1e-6


def _clustered_means(mat, radius):
    vals = np.sort(np.linalg.eigvals(mat).real)
    groups = [[vals[0]]]
    for v in vals[1:]:
        if v - groups[-1][-1] <= radius:
            groups[-1].append(v)
        else:
            groups.append([v])
    return np.array([np.mean(g) for g in groups])


def test_pushforward_preserves_eigenvalues(lta):
    # defective eigenvalues split by O(sqrt(eps)) individually; their cluster
    # means are similarity invariants at 1e-8 scale
    chart = lta.charts["y"]
    pts = sample_points(lta.domain, 10)
    for op in lta.operators.values():
        pushed = pushforward_many(op, chart, pts)
        raw = op.values_many(pts)
        for k in range(len(pts)):
            scale = 1.0 + np.max(np.abs(raw[k]))
            ev1 = _clustered_means(raw[k], 1e-4 * scale)
            ev2 = _clustered_means(pushed[k], 1e-4 * scale)
            assert ev1.shape == ev2.shape
            assert np.max(np.abs(ev1 - ev2)) <= 1e-8 * scale


def test_pushforward_singular_jacobian_rejected():
    c = DiffeoChart(src=CH2, dst=CH2,
                    forward=(Var(0), parse_expr("x1", CH2)))  # rank-1 map
    a = identity_operator(CH2)
    with pytest.raises(SingularJacobianError):
        pushforward_at(a, c, (0.5, 0.5))


def test_symbolic_pushforward_torsion_covariance(lta):
    # the torsion verdict is chart-independent: the level-3 torsion of the
    # symbolic pushforward vanishes, its level-2 does not
    chart = lta.charts["y"]
    op = lta.operators["L1"]
    pushed = pushforward_field(op, chart)
    pts = sample_points(lta.domain, 25)
    ys = chart.forward_many(pts)

    direct = pushforward_many(op, chart, pts)
    assert rel_err(pushed.values_many(ys), direct) <= 1e-9

    t3 = torsion_many(pushed, 3, ys)
    vals = pushed.values_many(ys)
    norm3 = np.max(np.abs(t3), axis=(1, 2, 3)) / (1 + np.max(np.abs(vals), axis=(1, 2)) ** 5)
    assert np.max(norm3) <= 1e-8
    t2 = torsion_many(pushed, 2, ys)
    norm2 = np.max(np.abs(t2), axis=(1, 2, 3)) / (1 + np.max(np.abs(vals), axis=(1, 2)) ** 3)
    assert np.max(norm2) > 1e-3


# ---------------------------------------------------------------------------
# one-form integration
# ---------------------------------------------------------------------------

def test_integrate_constant_form(lta):
    w = OneFormExpr(lta.chart, tuple(map(const, (1, 1, 0, 1, 0))))
    f = integrate_exact_one_form(w)
    assert f == parse_expr("x1 + x2 + x4", lta.chart)


def test_integrate_cubic_form():
    # (x1)^2 dx1 + dx6 integrates to x1^3/3 + x6 (the separating coordinate)
    w = OneFormExpr(CH7, tuple(parse_expr(s, CH7) for s in
                               ["x1^2", "0", "0", "0", "0", "1", "0"]))
    f = integrate_exact_one_form(w)
    expected = parse_expr("1/3*x1^3 + x6", CH7)
    assert f == expected
    # scalar multiples are equally valid annihilators; the sign-flipped
    # generator integrates to the sign-flipped potential
    w2 = OneFormExpr(CH7, tuple(parse_expr(s, CH7) for s in
                                ["x1^2", "0", "0", "0", "0", "-1", "0"]))
    f2 = integrate_exact_one_form(w2)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(10, 7))
    assert np.allclose(eval_many(f2, pts), eval_many(f, pts) - 2 * pts[:, 5])


def test_integrate_not_closed():
    w = OneFormExpr(CH2, (Var(1), const(0)))  # x2 dx1
    with pytest.raises(NotClosedError):
        integrate_exact_one_form(w)


def test_integrate_non_polynomial():
    w = OneFormExpr(CH2, (parse_expr("1/x1", CH2), const(0)))
    with pytest.raises(NonPolynomialError):
        integrate_exact_one_form(w)


def test_integrate_all_fixture_annihilators(lta, lfa1):
    rng = np.random.default_rng(1)
    for man in (lta, lfa1):
        pts = rng.uniform(0.5, 1.5, size=(10, man.chart.dim))
        for name, forms in man.annihilators.items():
            for w in forms:
                f = integrate_exact_one_form(w)
                for i in range(man.chart.dim):
                    from torsionlab.expr import diff
                    got = eval_many(diff(f, i), pts)
                    want = eval_many(w.components[i], pts)
                    assert np.max(np.abs(got - want)) <= 1e-10


# ---------------------------------------------------------------------------
# block detection
# ---------------------------------------------------------------------------

def test_detect_blocks_diagonal():
    mats = [np.diag([1.0, 2.0, 3.0])]
    part, residual = detect_blocks(mats, None, 1e-8)
    assert part.sizes == (1, 1, 1)
    assert residual <= 1e-8


def test_detect_blocks_lta_partition(lta):
    chart = lta.charts["y"]
    pts = sample_points(lta.domain, 50)
    mats = np.concatenate([pushforward_many(op, chart, pts)
                           for op in lta.operators.values()])
    part, residual = detect_blocks(list(mats), None, lta.tolerances["block"])
    assert part.sizes == (1, 1, 1, 2)
    assert residual <= lta.tolerances["block"]
    verified, residual2 = detect_blocks(list(mats), part, lta.tolerances["block"])
    assert verified.sizes == part.sizes and residual2 == residual


def test_detect_blocks_lfa1_partition(lfa1):
    chart = lfa1.charts["y"]
    pts = sample_points(lfa1.domain, 50)
    mats = np.concatenate([pushforward_many(op, chart, pts)
                           for op in lfa1.operators.values()])
    part, residual = detect_blocks(list(mats), None, lfa1.tolerances["block"])
    assert part.sizes == (1, 1, 1, 1, 3)
    assert residual <= lfa1.tolerances["block"]


def test_detect_blocks_hint_failure_reported():
    mats = [np.array([[1.0, 0.5], [0.0, 2.0]])]
    part, residual = detect_blocks(mats, BlockPartition((1, 1)), 1e-8)
    assert residual > 1e-8
    auto, _ = detect_blocks(mats, None, 1e-8)
    assert auto.sizes == (2,)
