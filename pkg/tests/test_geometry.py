from __future__ import annotations

from itertools import product

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.checks import demo_driver, transfer_checks
from branched_rough.controlled import davie_solve
from branched_rough.geometry import (
    Atlas,
    Chart,
    Connection,
    ManifoldRoughPath,
    covariant_derivative,
    inverse_jet,
    ito_kelly_manifold_defect,
    manifold_integral,
    manifold_rde_solve,
    multisets,
    n_perm,
    orbit,
    patched_integral,
    quasi_rde_coefficients,
    rde3_coefficients,
    right_inverse_residual,
    s_family,
    transfer_symbols,
    transfer_symbols_poly,
    transform_check,
)
from branched_rough.polymap import PolyMap

XS = sp.symbols("x1:3", real=True)
YS = sp.symbols("y1:3", real=True)
CURVED = Connection([[["x1", "0"], ["1/3", "1"]], [["0", "x2"], ["1/2", "x1*x2"]]], XS)
SYMBOLIC = Connection(
    [[[sp.Function(f"G{k}{a}{b}")(*XS) for b in range(2)] for a in range(2)] for k in range(2)], XS, exact=False
)


def test_multiset_combinatorics() -> None:
    assert multisets(2, 2) == [(0,), (1,), (0, 0), (0, 1), (1, 1)]
    assert sorted(orbit((0, 0, 1))) == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    assert n_perm((0, 0, 1)) == 3


def test_second_order_covariant_derivative() -> None:
    g = sp.Function("g")(*XS)
    G = PolyMap([g], XS, exact=False)
    for a, b in product(range(2), repeat=2):
        want = sp.diff(g, XS[a], XS[b]) - sum(SYMBOLIC.gamma(c, a, b) * sp.diff(g, XS[c]) for c in range(2))
        assert sp.simplify(covariant_derivative(SYMBOLIC, G, (a, b)).exprs[0] - want) == 0


def test_third_order_covariant_derivative() -> None:
    g = sp.Function("g")(*XS)
    G = PolyMap([g], XS, exact=False)

    def nabla2(b: int, c: int) -> sp.Expr:
        return sp.diff(g, XS[b], XS[c]) - sum(SYMBOLIC.gamma(e, b, c) * sp.diff(g, XS[e]) for e in range(2))

    for a, b, c in product(range(2), repeat=3):
        want = sp.diff(nabla2(b, c), XS[a])
        want -= sum(nabla2(e, c) * SYMBOLIC.gamma(e, a, b) + nabla2(b, e) * SYMBOLIC.gamma(e, a, c) for e in range(2))
        assert sp.simplify(covariant_derivative(SYMBOLIC, G, (a, b, c)).exprs[0] - want) == 0


def test_flat_connection_gives_identity_table() -> None:
    ms, table = transfer_symbols(Connection.flat(3), [[0.1, 0.2, 0.3]], 3)
    np.testing.assert_array_equal(table[0], np.diag([1 / n_perm(c) for c in ms]))


def test_second_order_transfer_is_symmetrised_christoffel() -> None:
    table = transfer_symbols_poly(CURVED, 2)
    assert sp.simplify(table[((1,), (0, 1))] - (XS[1] + sp.Rational(1, 2)) / 2) == 0
    assert table[((0,), (0, 0))] == XS[0]


def test_transfer_closed_forms_with_torsion() -> None:
    assert all(c.passed for c in transfer_checks(seed=11, npoints=3))


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_right_inverse_at_random_points(a: float, b: float) -> None:
    assert right_inverse_residual(CURVED, [a, b], 3) < 1e-12


@pytest.mark.parametrize("c", [0, 1, sp.Rational(3, 2), 2])
def test_s_family_solves_right_inverse(c) -> None:
    S = s_family(CURVED, c)
    assert right_inverse_residual(CURVED, [0.3, -0.7], 3, S=S) < 1e-12


def test_s_family_member_three_halves_is_transfer() -> None:
    S = s_family(CURVED, sp.Rational(3, 2))
    table = transfer_symbols_poly(CURVED, 3)
    for (up, lo), v in table.items():
        if len(up) == 1:
            assert sp.expand(S.get((up, lo), 0) - v) == 0


def test_inverse_jet_reverts_series() -> None:
    jet = inverse_jet(PolyMap(["x1 + x1**2"], ["x1"]), [0], 4)
    (u,) = jet.variables
    assert sp.expand(jet.exprs[0] - (u - u**2 + 2 * u**3 - 5 * u**4)) == 0


def test_transformed_connection_matches_textbook_law() -> None:
    ch = Chart.shear(2, "t**2/2 + t**3/3")
    new = CURVED.transform(ch)
    ys = ch.inverse.variables
    back = ch.inverse.exprs
    Jinv = sp.Matrix([[sp.diff(back[c], y) for y in ys] for c in range(2)])
    Jfwd = sp.Matrix([[sp.diff(ch.forward.exprs[k], x) for x in XS] for k in range(2)])
    sub = dict(zip(XS, back))
    for k, i, j in product(range(2), repeat=3):
        want = sum(
            Jfwd[k, c].xreplace(sub)
            * (
                sp.diff(back[c], ys[i], ys[j])
                + sum(CURVED.gamma(c, a, b).xreplace(sub) * Jinv[a, i] * Jinv[b, j] for a, b in product(range(2), repeat=2))
            )
            for c in range(2)
        )
        assert sp.expand(new.gamma(k, i, j) - want) == 0


@pytest.mark.parametrize("x0", [sp.Rational(0), sp.Rational(1, 3), sp.Rational(-2, 5)])
def test_one_dimensional_transition(x0) -> None:
    conn = Connection([[["1/2 + x1"]]], ["x1"])
    forward = PolyMap(["x1 + x1**3/10"], ["x1"])
    assert transform_check(conn, forward, [x0], 3) < 1e-12


def test_transform_law_fails_for_wrong_family_member() -> None:
    forward = PolyMap(["x1 + x2**2/3", "x2 - x1*x2/4 + x1**3/6"], XS)
    x0 = [sp.Rational(1, 5), sp.Rational(-1, 10)]
    assert transform_check(CURVED, forward, x0, 3) < 1e-10
    assert transform_check(CURVED, forward, x0, 3, c=1) > 1e-3


def _atlas() -> Atlas:
    return Atlas(
        {"B": Chart.shear(2, "t**2/2 + t**3/3")},
        {"reference": ((-1.0, 0.5), (-1.0, 2.0)), "B": ((0.2, 2.0), (-1.0, 2.0))},
    )


def test_integral_agrees_across_charts() -> None:
    X = demo_driver(8)
    MX = ManifoldRoughPath.from_reference(_atlas(), X)
    N = X.npoints - 1
    form = PolyMap(["1 + x2**2", "x1*x2 - x1"], ["x1", "x2"])
    a = patched_integral(form, CURVED, MX, 0, N, [("reference", 0, N)])
    b = patched_integral(form, CURVED, MX, 0, N, [("B", 0, N)])
    c = patched_integral(form, CURVED, MX, 0, N, [("B", 0, 100), ("reference", 100, N)])
    assert abs(a - b) < 1e-9 and abs(a - c) < 1e-9
    assert a == pytest.approx(manifold_integral(form, CURVED, X, 0, N), abs=1e-14)


def test_exact_form_integrates_to_increment() -> None:
    X = demo_driver(8)
    N = X.npoints - 1
    g = PolyMap(["x1**2*x2 - x2"], ["x1", "x2"])
    assert ito_kelly_manifold_defect(g, CURVED, X, 0, N) < 1e-10
    assert ito_kelly_manifold_defect(g, CURVED, X, 17, 201) < 1e-10


def test_rde_label_coefficients_match_order_three_closed_form() -> None:
    F = [[sp.Symbol(f"f{k}{a}") for a in range(2)] for k in range(2)]
    conn = Connection([[["y1/2", "1/3"], ["-1/4", "y2"]], [["1/5", "y1*y2"], ["y1 - 1/2", "1/4"]]], YS)
    G = quasi_rde_coefficients(F, conn, Connection.flat(2, XS), 3)
    R = rde3_coefficients(F, conn, 2)
    assert all(sp.expand(G[C][k] - R[C][k]) == 0 for C in R for k in range(2))


def test_order_two_coefficient_is_minus_half_christoffel() -> None:
    F = [[sp.Symbol(f"f{k}{a}") for a in range(2)] for k in range(2)]
    conn = Connection([[["y1/2", "1/3"], ["-1/4", "y2"]], [["1/5", "y1*y2"], ["y1 - 1/2", "1/4"]]], YS)
    G = quasi_rde_coefficients(F, conn, Connection.flat(2, XS), 2)
    for C in [(0, 0), (0, 1), (1, 1)]:
        for k in range(2):
            want = sum(
                -sp.Rational(1, 2) * conn.gamma(k, i, j) * F[i][a] * F[j][b]
                for a, b in orbit(C)
                for i, j in product(range(2), repeat=2)
            )
            assert sp.expand(G[C][k] - want) == 0


FN = [[YS[1] / 2, 1 - YS[0] * YS[1] / 4], [1 + YS[0] / 3, YS[0] / 2]]


def test_flat_manifold_rde_is_davie() -> None:
    X = demo_driver(8)
    sol = manifold_rde_solve(FN, Connection.flat(2, YS), Connection.flat(2, XS), X, [0.1, -0.2])
    vf = {X.letters()[a]: PolyMap([FN[0][a], FN[1][a]], YS) for a in range(2)}
    np.testing.assert_allclose(sol.Y, davie_solve(vf, X, [0.1, -0.2]).trace, atol=1e-12)


def test_zero_field_keeps_initial_point() -> None:
    X = demo_driver(6)
    conn = Connection([[["y1", "0"], ["1", "0"]], [["0", "1/2"], ["y2", "0"]]], YS)
    sol = manifold_rde_solve([[0, 0], [0, 0]], conn, Connection.flat(2, XS), X, [0.4, 0.5])
    np.testing.assert_array_equal(sol.Y, np.tile([0.4, 0.5], (X.npoints, 1)))


def test_rde_solution_is_chart_invariant_at_first_order() -> None:
    rng = np.random.default_rng(5)
    CN = Connection.random(2, rng, degree=1, torsion=True, variables=YS)
    CM = Connection.random(2, rng, degree=1, torsion=True, variables=XS)
    F = [[YS[1] / 2 + XS[0] / 3, 1 - YS[0] * YS[1] / 4], [1 + YS[0] / 3, YS[0] / 2 - XS[1] / 5]]
    us = sp.symbols("v1:3", real=True)
    fwd = PolyMap([YS[0], YS[1] + YS[0] ** 2 / 3 - YS[0] / 5], YS)
    ch = Chart(fwd, PolyMap([us[0], us[1] - us[0] ** 2 / 3 + us[0] / 5], us))
    sub = dict(zip(YS, ch.inverse.exprs))
    J = [[sp.diff(fwd.exprs[k], YS[i]).xreplace(sub) for i in range(2)] for k in range(2)]
    F2 = [[sp.expand(sum(J[k][i] * F[i][a].xreplace(sub) for i in range(2))) for a in range(2)] for k in range(2)]
    CN2 = CN.transform(ch)
    y0 = [0.1, -0.2]
    errs = []
    for depth in (6, 8):
        X = demo_driver(depth)
        s1 = manifold_rde_solve(F, CN, CM, X, y0)
        s2 = manifold_rde_solve(F2, CN2, CM, X, fwd.point(y0))
        errs.append(float(np.max(np.abs(fwd.point(s1.Y[-1]) - s2.Y[-1]))))
    # Smooth bracket drivers give first-order global error, so two refinements divide it by about four.
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-2


@pytest.mark.parametrize("seed", [0, 1])
def test_numeric_and_symbolic_transfer_routes_agree(seed: int) -> None:
    rng = np.random.default_rng(seed)
    conn = Connection.random(2, rng, degree=2, torsion=True)
    pts = rng.uniform(-1, 1, (4, 2))
    ms, num = transfer_symbols(conn, pts, 3)
    exact = transfer_symbols_poly(conn, 3)
    for p, x in enumerate(pts):
        sub = dict(zip(conn.variables, x))
        for i, up in enumerate(ms):
            for j, lo in enumerate(ms):
                want = float(sp.sympify(exact.get((up, lo), 0)).xreplace(sub))
                assert num[p, i, j] == pytest.approx(want, abs=1e-12)
