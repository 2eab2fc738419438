from __future__ import annotations

import pytest

from branched_rough.checks import _max_forest_diff, demo_driver
from branched_rough.controlled import compose_smooth, identity_controlled
from branched_rough.forests import atom, format_forest, parse_forest
from branched_rough.lift import InconsistentBracketError, lift, pushforward, pushforward_bracket, star_graft
from branched_rough.polymap import PolyMap
from branched_rough.rough_path import from_increments, quasi_geometric_defect, smooth_lift

PATH = PolyMap(["t", "t**2"], ["t"])
F = PolyMap(["x1**2*x2 + x2", "x1 - x2**3"], ["x1", "x2"])


def test_star_graft_relabels_and_attaches() -> None:
    t = star_graft(parse_forest("a(b)"), [(atom("b"), parse_forest("d*e")), (atom("a"), parse_forest("c"))])
    assert format_forest(t) == format_forest(parse_forest("a(c,b(d,e))"))
    with pytest.raises(ValueError):
        star_graft(parse_forest("a*b"), [])


@pytest.mark.parametrize("make", [lambda: smooth_lift(PATH, 3.5, 7), lambda: demo_driver(7)])
def test_lift_of_identity_is_the_driver(make) -> None:
    X = make()
    d, _ = _max_forest_diff(lift(identity_controlled(X), [a.name for a in X.letters()]), X)
    assert d < 1e-12


@pytest.mark.parametrize(("p", "depth", "tol"), [(2.5, 9, 1e-3), (3.5, 9, 1e-6), (4.5, 8, 1e-6)])
def test_pushforward_matches_composed_lift(p: float, depth: int, tol: float) -> None:
    X = smooth_lift(PATH, p, depth)
    d, where = _max_forest_diff(pushforward(F, X, tol=1.0), smooth_lift(F.compose(PATH), p, depth))
    assert d < tol, where


def test_pushforward_of_quasi_driver_is_quasi_geometric() -> None:
    X = demo_driver(8)
    PB = pushforward_bracket(F, X, tol=1.0)
    assert max(quasi_geometric_defect(PB).values()) < 1e-4


def test_pushforward_bracket_of_identity_keeps_brackets() -> None:
    X = demo_driver(7)
    PB = pushforward_bracket(PolyMap.identity(2), X, names=["1", "2"], tol=1.0)
    N = X.npoints - 1
    for lab in ("{11}", "{12}", "{22}"):
        assert PB.value(lab, 0, N) == pytest.approx(X.value(lab, 0, N), abs=1e-12)


def test_inconsistent_bracket_is_rejected() -> None:
    X = demo_driver(6)
    cells = X.levels[X.depth].copy()
    cells[:, X.basis.index[parse_forest("{12}")]] += 0.05 * (X.times[1] - X.times[0])
    Y = from_increments(X.basis, X.p, X.times, cells)
    with pytest.raises(InconsistentBracketError):
        pushforward(F, Y)


def test_lift_needs_bracket_components() -> None:
    X = smooth_lift(PATH, 3.5, 6)
    with pytest.raises(KeyError, match="no component"):
        lift(compose_smooth(F, identity_controlled(X)))
