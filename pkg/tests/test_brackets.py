from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.brackets import (
    bracket_polynomial,
    consistency_report,
    forest_to_trees,
    full_labels,
    root_label_J,
    simple_labels,
)
from branched_rough.checks import demo_driver
from branched_rough.forests import atom, enumerate_forests, format_forest, parse_forest, parse_label
from branched_rough.hopf import AlgElem, TensorElem, ck_coproduct
from branched_rough.rough_path import from_increments


def E(text: str) -> AlgElem:
    return AlgElem.basis(text)


def test_simple_labels_are_multisets() -> None:
    labs = simple_labels([atom("a"), atom("b")], 3)
    assert len(labs) == 2 + 3 + 4
    assert parse_label("{aab}") in labs


def test_full_labels_add_forest_labels() -> None:
    assert len(full_labels([atom("a")], 3)) == len(simple_labels([atom("a")], 3)) + 1


@pytest.mark.parametrize(
    ("forest", "expected"),
    [
        ("a", ["a"]),
        ("a*b", ["a*b", "-a(b)", "-b(a)"]),
        ("a*a", ["a*a", "-2 a(a)"]),
    ],
)
def test_bracket_polynomial(forest: str, expected: list[str]) -> None:
    want = AlgElem.zero() if hasattr(AlgElem, "zero") else E("a").scale(0)
    for term in expected:
        coeff, _, body = term.rpartition(" ")
        sign = -1 if term.startswith("-") else 1
        scale = int(coeff.lstrip("-")) if coeff.lstrip("-") else 1
        want = want + E(body.lstrip("-")).scale(sign * scale)
    assert bracket_polynomial(parse_forest(forest)) == want


def test_forest_to_trees_expands_product() -> None:
    assert forest_to_trees(parse_forest("a*b")) == E("a(b)") + E("b(a)") + E("{ab}")


def test_root_label_J() -> None:
    assert root_label_J(parse_forest("a"), parse_forest("b")) == E("b(a)")
    assert root_label_J(parse_forest("a"), parse_forest("b(c)")) == E("a").scale(0)


def test_demo_driver_is_consistent() -> None:
    X = demo_driver(6)
    assert max(r[3] for r in consistency_report(X)) < 1e-12


def test_perturbed_bracket_is_inconsistent() -> None:
    X = demo_driver(6)
    cells = X.levels[X.depth].copy()
    cells[:, X.basis.index[parse_forest("{12}")]] += 1e-2 * (X.times[1] - X.times[0])
    Y = from_increments(X.basis, X.p, X.times, cells)
    assert max(r[3] for r in consistency_report(Y)) > 1e-3


_FORESTS = [f for f in enumerate_forests([atom("a"), atom("b")], 4) if f.trees]


def _bracket_vertex_to_polynomial(f) -> AlgElem:
    """Replace a lone bracket vertex •(g) by ≪g≫; any other forest is kept."""
    if f.is_tree and f.size == 1 and f.tree().label.kind != "atom":
        lab = f.tree().label
        g = lab.forest if lab.kind == "forest" else parse_forest("*".join(m.name for m in lab.members))
        return bracket_polynomial(g)
    return AlgElem.basis(f)


@given(st.sampled_from([f for f in _FORESTS if f.degree <= 2]))
def test_bracket_polynomial_is_primitive_at_degree_two(f) -> None:
    x = bracket_polynomial(f)
    unit = AlgElem.unit()
    assert ck_coproduct(x) == TensorElem.pure(unit, x) + TensorElem.pure(x, unit)


@pytest.mark.parametrize("f", _FORESTS, ids=format_forest)
def test_bracket_polynomial_is_primitive_modulo_lower_brackets(f) -> None:
    x = bracket_polynomial(f)
    unit = AlgElem.unit()
    residual = ck_coproduct(x) - TensorElem.pure(unit, x) - TensorElem.pure(x, unit)
    assert residual.apply_slot(1, _bracket_vertex_to_polynomial) == residual.scale(0)
