from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.forests import parse_label
from branched_rough.polymap import PolyMap
from branched_rough.rough_path import (
    RoughPath,
    chen_defect,
    chen_report,
    geometric_defect,
    grouplike_report,
    pure_bracket_path,
    quasi_geometric_defect,
    quasi_geometric_lift,
    regularity_report,
    smooth_lift,
)

PATH = PolyMap(["t", "t**2"], ["t"])
X = smooth_lift(PATH, 3.5, 6)
N = X.npoints - 1


@pytest.mark.parametrize(
    ("forest", "value"),
    [
        ("1", 1.0),
        ("2", 1.0),
        ("1(1)", 1 / 2),
        ("2(1)", 2 / 3),  # ∫ x1 dx2 = ∫ t · 2t dt
        ("1(2)", 1 / 3),
        ("1(1(1))", 1 / 6),
        ("1(1,1)", 1 / 3),
        ("2(1,1)", 1 / 2),  # ∫ t² · 2t dt
        ("1*2", 1.0),
    ],
)
def test_smooth_lift_iterated_integrals(forest: str, value: float) -> None:
    assert X.value(forest, 0, N) == pytest.approx(value, abs=1e-12)


@given(st.integers(0, N), st.integers(0, N), st.integers(0, N))
def test_chen_on_arbitrary_triples(a: int, b: int, c: int) -> None:
    s, u, t = sorted((a, b, c))
    assert chen_defect(X, s, u, t) < 1e-12


def test_reports_are_small() -> None:
    assert chen_report(X).max() < 1e-12
    assert grouplike_report(X).max() < 1e-12
    assert max(geometric_defect(X).values()) < 1e-12
    assert all(v < 1.5 for v in regularity_report(X).values())


def test_quasi_geometric_lift_uses_bracket() -> None:
    Q = quasi_geometric_lift(PATH, 3.5, 6, bracket_paths={parse_label("{11}"): PolyMap(["t/3"], ["t"])})
    assert Q.value("{11}", 0, N) == pytest.approx(1 / 3)
    # X^{1*1} = 2 X^{1(1)} + X^{{11}}
    assert Q.value("1(1)", 0, N) == pytest.approx(1 / 3)
    assert max(quasi_geometric_defect(Q).values()) < 1e-12
    assert max(geometric_defect(Q).values()) > 0.1


def test_pure_bracket_path() -> None:
    B = pure_bracket_path(5)
    M = B.npoints - 1
    assert B.value("1", 0, M) == 0.0
    assert B.value("1(1)", 0, M) == pytest.approx(-0.5)
    assert B.value("{11}", 0, M) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        pure_bracket_path(5, p=3.5)


def test_dump_load_roundtrip() -> None:
    Q = quasi_geometric_lift(PATH, 3.5, 4, bracket_paths={parse_label("{12}"): PolyMap(["t**2"], ["t"])})
    R = RoughPath.load(Q.dump())
    assert R.letters() == Q.letters()
    for a, b in zip(R.levels, Q.levels):
        np.testing.assert_array_equal(a, b)


def test_dyadic_levels_are_products() -> None:
    top = X.increment(0, N)
    np.testing.assert_allclose(top, X.levels[0][0], atol=1e-14)
