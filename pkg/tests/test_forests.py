from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.forests import (
    EMPTY,
    ParseError,
    admissible_cuts,
    atom,
    attach_at,
    enumerate_forests,
    enumerate_trees,
    format_forest,
    graft_ways,
    multiset_label,
    parse_forest,
    parse_label,
    parse_tree,
    postorder_labels,
    symmetry_factor,
)

LETTERS = [atom("a"), atom("b")]
FORESTS = enumerate_forests(LETTERS, 4)
NONEMPTY = [f for f in FORESTS if f.trees]


def test_basis_sizes() -> None:
    assert len(FORESTS) == 143
    assert len(enumerate_trees([atom("a")], 4)) == 1 + 1 + 2 + 4
    assert len(enumerate_forests([atom("a")], 3)) == 1 + 1 + 2 + 4


@given(st.sampled_from(FORESTS))
def test_format_parse_roundtrip(f) -> None:
    assert parse_forest(format_forest(f)) == f


@given(st.sampled_from(FORESTS), st.sampled_from(FORESTS))
def test_forest_product_commutative_and_hash_consed(f, g) -> None:
    assert f * g == g * f
    assert (f * g) is (g * f)
    assert (f * g).degree == f.degree + g.degree


def test_child_order_is_irrelevant() -> None:
    assert parse_forest("a(c,b(d))") == parse_forest("a(b(d),c)")
    assert parse_forest("b*a") == parse_forest("a*b")


@pytest.mark.parametrize(
    ("text", "sigma"),
    [("a", 1), ("a(b,b)", 2), ("a*a", 2), ("a(b,b,b)", 6), ("a(b(c),b(c))", 2), ("a(b)*a(b)*c", 2)],
)
def test_symmetry_factor(text: str, sigma: int) -> None:
    assert symmetry_factor(parse_forest(text)) == sigma


def test_postorder_addresses_vertices() -> None:
    assert [lab.name for lab in postorder_labels(parse_forest("a(c,b(d))"))] == ["c", "d", "b", "a"]
    assert attach_at(parse_forest("b(c)"), parse_forest("a"), 0) == parse_forest("a(b(c))")


def test_graft_ways_include_root_product() -> None:
    ways = {format_forest(w) for w in graft_ways(parse_forest("a"), parse_forest("b(c)"))}
    assert ways == {"b(c(a))", "b(a,c)", "a*b(c)"}


@given(st.sampled_from([f for f in NONEMPTY if f.is_tree]))
def test_admissible_cuts_preserve_degree(f) -> None:
    cuts = admissible_cuts(f.tree())
    assert cuts[-1] == (f, EMPTY)
    for pruned, trunk in cuts:
        assert pruned.degree + trunk.degree == f.degree
    assert all(trunk.trees for _, trunk in cuts[:-1])


def test_labels_and_weights() -> None:
    lab = parse_label("{ab}")
    assert lab == multiset_label([atom("b"), atom("a")])
    assert lab.weight == 2
    assert parse_forest("{ab}(c)").degree == 3
    assert parse_forest("1").degree == 1
    assert EMPTY.trees == () and EMPTY.degree == 0


def test_parse_tree_single() -> None:
    assert parse_tree("a(b)").as_forest() == parse_forest("a(b)")


@pytest.mark.parametrize("bad", ["a(", "a)b", "a(b,)", "{a", "*a"])
def test_parse_errors(bad: str) -> None:
    with pytest.raises(ParseError):
        parse_forest(bad)
