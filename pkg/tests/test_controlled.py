from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import solve_ivp

from branched_rough.checks import demo_driver
from branched_rough.controlled import (
    compose_smooth,
    controlled_expansion_defect,
    davie_residuals,
    davie_solve,
    identity_controlled,
    kelly_change_of_variable_defect,
    kelly_function_defect,
    quasi_change_of_variable_defect,
    rde_coefficients,
    rough_integral,
)
from branched_rough.forests import atom, parse_forest, parse_tree
from branched_rough.polymap import PolyMap
from branched_rough.rough_path import pure_bracket_path, smooth_lift

VARS = ["x1", "x2"]
PATH = PolyMap(["t", "t**2"], ["t"])
X = smooth_lift(PATH, 3.5, 8)
N = X.npoints - 1
FIELDS = {
    atom("1"): PolyMap(["x2/2", "1 - x1*x2/4"], VARS),
    atom("2"): PolyMap(["1 + x1/3", "x1/2"], VARS),
}


def test_rough_integral_against_riemann() -> None:
    errs = []
    for depth in (5, 6, 7):
        Xd = smooth_lift(PATH, 3.5, depth)
        H = compose_smooth(PolyMap(["x1*x2**2"], VARS), identity_controlled(Xd))
        errs.append(abs(rough_integral({atom("2"): H}, Xd, 0, Xd.npoints - 1)[0] - 2 / 7))  # ∫ t · t⁴ · 2t dt
    assert errs[-1] < 1e-6
    assert errs[0] / errs[-1] > 4**2


@pytest.mark.parametrize("forest", ["1", "2", "1(2)", "1*2"])
def test_composition_expansion_is_local(forest: str) -> None:
    H = compose_smooth(PolyMap(["x1**2*x2 - x2**3"], VARS), identity_controlled(X))
    coarse = controlled_expansion_defect(H, parse_forest(forest), 0, 64)
    fine = controlled_expansion_defect(H, parse_forest(forest), 0, 16)
    assert fine <= coarse + 1e-15


def test_rde_coefficient_of_ladder() -> None:
    x1, x2 = (sp.Symbol(v, real=True) for v in VARS)
    got = rde_coefficients(FIELDS, parse_tree("2(1)")).exprs
    F1 = sp.Matrix(FIELDS[atom("1")].exprs)
    F2 = sp.Matrix(FIELDS[atom("2")].exprs)
    want = F2.jacobian([x1, x2]) * F1
    assert all(sp.expand(a - b) == 0 for a, b in zip(got, want))


def test_davie_against_ode_solver() -> None:
    Y = davie_solve(FIELDS, X, [0.1, 0.2]).trace
    f1, f2 = FIELDS[atom("1")], FIELDS[atom("2")]

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return f1.point(y) * 1.0 + f2.point(y) * 2 * t

    ref = solve_ivp(rhs, (0, 1), [0.1, 0.2], rtol=1e-12, atol=1e-12).y[:, -1]
    np.testing.assert_allclose(Y[-1], ref, atol=1e-6)


def test_davie_residuals_decay() -> None:
    Y = davie_solve(FIELDS, X, [0.1, 0.2]).trace
    r = davie_residuals(FIELDS, X, Y, [3, 4, 5, 6])
    slope = -np.polyfit([3, 4, 5, 6], np.log2([r[L] for L in (3, 4, 5, 6)]), 1)[0]
    assert slope > 3.0


def test_zero_fields_leave_state_fixed() -> None:
    zero = {a: PolyMap(["0", "0"], VARS) for a in FIELDS}
    Y = davie_solve(zero, X, [0.3, -0.4]).trace
    np.testing.assert_array_equal(Y, np.tile([0.3, -0.4], (N + 1, 1)))


@pytest.mark.parametrize(("s", "t"), [(0, N), (3, 200), (100, 101)])
def test_kelly_function_formula(s: int, t: int) -> None:
    g = PolyMap(["x1**3*x2 - x2**2"], VARS)
    assert kelly_function_defect(g, X, s, t) < 1e-6
    assert kelly_function_defect(g, demo_driver(8), s, t) < 1e-6


def test_kelly_defect_converges() -> None:
    g = PolyMap(["x1**3*x2 - x2**2"], VARS)
    coarse = smooth_lift(PATH, 3.5, 5)
    assert kelly_function_defect(g, X, 0, N) < kelly_function_defect(g, coarse, 0, coarse.npoints - 1) / 8


def test_kelly_on_pure_bracket_path() -> None:
    B = pure_bracket_path(6)
    assert kelly_function_defect(PolyMap(["x1**2"], ["x1"]), B, 0, B.npoints - 1) < 1e-12


def test_change_of_variable_for_solutions() -> None:
    Q = demo_driver(8)
    Y = davie_solve(FIELDS, Q, [0.1, 0.2])
    g = PolyMap(["x1*x2 + x2**2"], VARS)
    M = Q.npoints - 1
    assert quasi_change_of_variable_defect(g, Y, FIELDS, Q, 0, M) < 1e-5
    with pytest.raises(KeyError, match="bracket component"):
        kelly_change_of_variable_defect(g, Y, FIELDS, Q, 0, M)
