from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.forests import atom, enumerate_forests, parse_forest
from branched_rough.hopf import (
    AlgElem,
    antipode_ck,
    antipode_gl,
    ck_coproduct,
    counit,
    gl_coproduct,
    gl_product,
    hoffman_exp,
    hoffman_log,
    iota,
    pairing,
    parse_word,
    phi,
    quasi_shuffle,
    shuffle,
)

FORESTS = enumerate_forests([atom("a"), atom("b")], 3)
SMALL = [f for f in FORESTS if f.degree <= 2]


def E(text: str) -> AlgElem:
    return AlgElem.basis(text)


def test_ck_coproduct_small() -> None:
    assert str(ck_coproduct("a(b)")) == "1 ⊗ a(b) + b ⊗ a + a(b) ⊗ 1"


def test_ck_coproduct_is_multiplicative() -> None:
    lhs = ck_coproduct(E("a(b)") * E("c"))
    rhs = ck_coproduct("a(b)").slot_product(ck_coproduct("c"), lambda x, y: x * y)
    assert lhs == rhs


@pytest.mark.parametrize("text", ["a", "a(b)", "a*b", "a(b,c)", "a(b(c))"])
def test_ck_antipode_convolution(text: str) -> None:
    conv = ck_coproduct(text).apply_slot(0, lambda f: antipode_ck(AlgElem.basis(f))).contract(lambda x, y: x * y)
    assert conv == AlgElem.unit().scale(counit(text))


def test_antipode_values() -> None:
    assert antipode_ck("a(b)") == E("a*b") - E("a(b)")
    assert antipode_gl("a(b)") == -E("a(b)")
    assert antipode_gl("a*b") == E("a*b") + E("a(b)") + E("b(a)")


def test_gl_product_golden() -> None:
    assert gl_product("d", "a(b,c)") == E("d*a(b,c)") + E("a(b,c,d)") + E("a(b,c(d))") + E("a(c,b(d))")


@given(st.sampled_from(SMALL), st.sampled_from(SMALL), st.sampled_from(SMALL))
def test_gl_product_associative(x, y, z) -> None:
    assert gl_product(gl_product(x, y), z) == gl_product(x, gl_product(y, z))


@given(st.sampled_from(FORESTS), st.sampled_from(FORESTS), st.sampled_from(FORESTS))
def test_pairing_duality(x, y, z) -> None:
    # ⟨x ⋆ y, z⟩ = ⟨x ⊗ y, Δ_CK z⟩ with the pruned part on the left.
    lhs = pairing(gl_product(x, y), z)
    rhs = sum(
        (c * pairing(x, a) * pairing(y, b) for (a, b), c in ck_coproduct(z).terms.items()),
        Fraction(0),
    )
    assert lhs == rhs


def test_pairing_symmetry_factor() -> None:
    assert pairing("a(b,b)", "a(b,b)") == 2
    assert pairing("a", "b") == 0


def test_gl_coproduct_primitive_letters() -> None:
    assert str(gl_coproduct("a")) == "1 ⊗ a + a ⊗ 1"


def test_quasi_shuffle_two_letters() -> None:
    qs = quasi_shuffle(parse_word("a"), parse_word("b"))
    assert qs == {parse_word("ab"): 1, parse_word("ba"): 1, parse_word("{ab}"): 1}
    assert shuffle(parse_word("a"), parse_word("b")) == {parse_word("ab"): 1, parse_word("ba"): 1}


@pytest.mark.parametrize("word", ["a", "ab", "abc", "a{bc}d", "aab"])
def test_hoffman_exp_log_inverse(word: str) -> None:
    w = parse_word(word)
    acc: dict = {}
    for v, c in hoffman_log(w).items():
        for u, d in hoffman_exp(v).items():
            acc[u] = acc.get(u, 0) + c * d
    assert {u: c for u, c in acc.items() if c} == {w: 1}


def test_phi_of_ladder_and_iota() -> None:
    assert phi("a(b)") == {parse_word("ba"): 1}
    assert iota(parse_word("ba")) == parse_forest("a(b)").tree()
