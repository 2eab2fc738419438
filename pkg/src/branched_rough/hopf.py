"""Exact forest algebra: Connes-Kreimer and Grossman-Larson structures and words.

Scalars are :class:`fractions.Fraction`.  ``AlgElem`` multiplication ``x * y``
is the commutative forest product; ``x.star(y)`` is the Grossman-Larson
product.  Coproducts return :class:`TensorElem` with explicit arity.
"""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from itertools import combinations, product
from math import factorial
from typing import Callable, Iterable, Iterator, Mapping, Union

from .forests import (
    EMPTY,
    Forest,
    Label,
    Tree,
    admissible_cuts,
    all_nontotal_cuts,
    format_forest,
    format_label,
    graft_ways,
    multiset_label,
    parse_forest,
    parse_label,
    symmetry_factor,
)

__all__ = [
    "AlgElem",
    "TensorElem",
    "Word",
    "antipode_ck",
    "antipode_gl",
    "ck_coproduct",
    "counit",
    "cut_bullet",
    "format_word",
    "gl_coproduct",
    "gl_product",
    "hoffman_exp",
    "hoffman_log",
    "iota",
    "iterated_coproduct",
    "pairing",
    "parse_word",
    "phi",
    "phi_tilde",
    "psi",
    "quasi_shuffle",
    "shuffle",
    "tensor_pairing",
]

Scalar = Union[int, Fraction]


class AlgElem:
    """Finite rational combination of forests; zero coefficients are never stored."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Forest, Scalar] | Iterable[tuple[Forest, Scalar]] = ()) -> None:
        acc: dict[Forest, Fraction] = defaultdict(Fraction)
        items = terms.items() if isinstance(terms, Mapping) else terms
        for f, c in items:
            acc[f] += c
        self.terms = {f: c for f, c in acc.items() if c != 0}

    @classmethod
    def basis(cls, f: Forest | Tree | str) -> AlgElem:
        if isinstance(f, str):
            f = parse_forest(f)
        if isinstance(f, Tree):
            f = f.as_forest()
        return cls({f: Fraction(1)})

    @classmethod
    def unit(cls) -> AlgElem:
        return cls({EMPTY: Fraction(1)})

    def __iter__(self) -> Iterator[tuple[Forest, Fraction]]:
        return iter(sorted(self.terms.items(), key=lambda kv: kv[0].key))

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def coeff(self, f: Forest | Tree) -> Fraction:
        if isinstance(f, Tree):
            f = f.as_forest()
        return self.terms.get(f, Fraction(0))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, AlgElem):
            return self.terms == other.terms
        if other == 0:
            return not self.terms
        return NotImplemented

    def __add__(self, other: AlgElem) -> AlgElem:
        return AlgElem(list(self.terms.items()) + list(other.terms.items()))

    def __sub__(self, other: AlgElem) -> AlgElem:
        return self + (-other)

    def __neg__(self) -> AlgElem:
        return AlgElem({f: -c for f, c in self.terms.items()})

    def scale(self, c: Scalar) -> AlgElem:
        return AlgElem({f: c * v for f, v in self.terms.items()})

    def __rmul__(self, c: Scalar) -> AlgElem:
        return self.scale(c)

    def __mul__(self, other: AlgElem | Scalar) -> AlgElem:
        if not isinstance(other, AlgElem):
            return self.scale(other)
        acc: dict[Forest, Fraction] = defaultdict(Fraction)
        for f, a in self.terms.items():
            for g, b in other.terms.items():
                acc[f * g] += a * b
        return AlgElem(acc)

    def star(self, other: AlgElem) -> AlgElem:
        return gl_product(self, other)

    def map(self, fn: Callable[[Forest], AlgElem]) -> AlgElem:
        acc: dict[Forest, Fraction] = defaultdict(Fraction)
        for f, c in self.terms.items():
            for g, d in fn(f).terms.items():
                acc[g] += c * d
        return AlgElem(acc)

    def truncate(self, n: int) -> AlgElem:
        return AlgElem({f: c for f, c in self.terms.items() if f.degree <= n})

    def to_lines(self) -> list[str]:
        return [f"{c.numerator}/{c.denominator} {format_forest(f)}" for f, c in self]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> AlgElem:
        terms = []
        for line in lines:
            line = line.strip()
            if not line:
                continue
            coeff, literal = line.split(None, 1)
            terms.append((parse_forest(literal), Fraction(coeff)))
        return cls(terms)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for f, c in self:
            lit = format_forest(f) if f.trees else "1"
            if c == 1:
                parts.append(f"+ {lit}")
            elif c == -1:
                parts.append(f"- {lit}")
            else:
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c)} {lit}")
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    def __repr__(self) -> str:
        return f"AlgElem({str(self)!r})"


class TensorElem:
    """Finite rational combination of m-fold tensors of forests."""

    __slots__ = ("arity", "terms")

    def __init__(self, arity: int, terms: Mapping[tuple[Forest, ...], Scalar] | Iterable = ()) -> None:
        self.arity = arity
        acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
        items = terms.items() if isinstance(terms, Mapping) else terms
        for k, c in items:
            if len(k) != arity:
                raise ValueError(f"tensor of arity {len(k)} in an arity-{arity} element")
            acc[k] += c
        self.terms = {k: c for k, c in acc.items() if c != 0}

    @classmethod
    def pure(cls, *factors: AlgElem) -> TensorElem:
        acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
        for combo in product(*(x.terms.items() for x in factors)):
            c = Fraction(1)
            for _, v in combo:
                c *= v
            acc[tuple(f for f, _ in combo)] += c
        return cls(len(factors), acc)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorElem):
            return NotImplemented
        return self.arity == other.arity and self.terms == other.terms

    def __add__(self, other: TensorElem) -> TensorElem:
        if self.arity != other.arity:
            raise ValueError("arity mismatch")
        return TensorElem(self.arity, list(self.terms.items()) + list(other.terms.items()))

    def __sub__(self, other: TensorElem) -> TensorElem:
        return self + other.scale(-1)

    def scale(self, c: Scalar) -> TensorElem:
        return TensorElem(self.arity, {k: c * v for k, v in self.terms.items()})

    def __iter__(self) -> Iterator[tuple[tuple[Forest, ...], Fraction]]:
        return iter(sorted(self.terms.items(), key=lambda kv: tuple(f.key for f in kv[0])))

    def __len__(self) -> int:
        return len(self.terms)

    def apply_slot(self, i: int, fn: Callable[[Forest], TensorElem | AlgElem]) -> TensorElem:
        """Apply a linear map to slot i; a TensorElem result widens the arity."""
        acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
        new_arity = None
        for k, c in self.terms.items():
            img = fn(k[i])
            if isinstance(img, AlgElem):
                img = TensorElem(1, {(f,): v for f, v in img.terms.items()})
            new_arity = self.arity - 1 + img.arity
            for sub, v in img.terms.items():
                acc[k[:i] + sub + k[i + 1 :]] += c * v
        if new_arity is None:
            probe = fn(EMPTY)
            width = 1 if isinstance(probe, AlgElem) else probe.arity
            new_arity = self.arity - 1 + width
        return TensorElem(new_arity, acc)

    def contract(self, mult: Callable[[AlgElem, AlgElem], AlgElem]) -> AlgElem:
        """Collapse an arity-2 tensor with a bilinear product."""
        if self.arity != 2:
            raise ValueError("contract needs arity 2")
        out = AlgElem()
        for (f, g), c in self.terms.items():
            out = out + mult(AlgElem.basis(f), AlgElem.basis(g)).scale(c)
        return out

    def slot_product(self, other: TensorElem, mult: Callable[[AlgElem, AlgElem], AlgElem]) -> TensorElem:
        """Slotwise product in the tensor-product algebra."""
        if self.arity != other.arity:
            raise ValueError("arity mismatch")
        acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                pieces = [mult(AlgElem.basis(a), AlgElem.basis(b)) for a, b in zip(k1, k2)]
                for combo in product(*(p.terms.items() for p in pieces)):
                    c = c1 * c2
                    for _, v in combo:
                        c *= v
                    acc[tuple(f for f, _ in combo)] += c
        return TensorElem(self.arity, acc)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        out = []
        for k, c in self:
            lit = " ⊗ ".join(format_forest(f) if f.trees else "1" for f in k)
            out.append(f"{c} {lit}" if c != 1 else lit)
        return " + ".join(out)

    def __repr__(self) -> str:
        return f"TensorElem({self.arity}, {str(self)!r})"


def _as_elem(x: AlgElem | Forest | Tree | str) -> AlgElem:
    return x if isinstance(x, AlgElem) else AlgElem.basis(x)


# -------------------------------------------------------- Connes-Kreimer side

_TREE_CK: dict[Tree, dict[tuple[Forest, Forest], int]] = {}


def _tree_ck(t: Tree) -> dict[tuple[Forest, Forest], int]:
    hit = _TREE_CK.get(t)
    if hit is None:
        hit = defaultdict(int)
        for above, below in admissible_cuts(t):
            hit[(above, below)] += 1
        hit = dict(hit)
        _TREE_CK[t] = hit
    return hit


_FOREST_CK: dict[Forest, dict[tuple[Forest, Forest], int]] = {}


def _forest_ck(f: Forest) -> dict[tuple[Forest, Forest], int]:
    hit = _FOREST_CK.get(f)
    if hit is not None:
        return hit
    acc: dict[tuple[Forest, Forest], int] = {(EMPTY, EMPTY): 1}
    for t in f.trees:
        nxt: dict[tuple[Forest, Forest], int] = defaultdict(int)
        for (a, b), c in acc.items():
            for (ta, tb), d in _tree_ck(t).items():
                nxt[(a * ta, b * tb)] += c * d
        acc = nxt
    _FOREST_CK[f] = dict(acc)
    return _FOREST_CK[f]


def ck_coproduct(x: AlgElem | Forest | Tree | str) -> TensorElem:
    """Sum over admissible cuts of (pruned part) ⊗ (root part), multiplicative on forests."""
    x = _as_elem(x)
    acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
    for f, c in x.terms.items():
        for k, d in _forest_ck(f).items():
            acc[k] += c * d
    return TensorElem(2, acc)


def counit(x: AlgElem | Forest | Tree | str) -> Fraction:
    return _as_elem(x).coeff(EMPTY)


_S_CK: dict[Tree, AlgElem] = {}


def _tree_antipode_ck(t: Tree) -> AlgElem:
    hit = _S_CK.get(t)
    if hit is None:
        hit = AlgElem(((tc, (-1) ** (k + 1)) for k, tc in all_nontotal_cuts(t)))
        _S_CK[t] = hit
    return hit


def antipode_ck(x: AlgElem | Forest | Tree | str) -> AlgElem:
    """Sum over non-total cuts with sign (-1)^(|C|+1), extended multiplicatively."""

    def on_forest(f: Forest) -> AlgElem:
        out = AlgElem.unit()
        for t in f.trees:
            out = out * _tree_antipode_ck(t)
        return out

    return _as_elem(x).map(on_forest)


# -------------------------------------------------------- Grossman-Larson side

_GL_PROD: dict[tuple[Forest, Forest], AlgElem] = {}


def _gl_basis(f: Forest, g: Forest) -> AlgElem:
    hit = _GL_PROD.get((f, g))
    if hit is None:
        hit = AlgElem((h, 1) for h in graft_ways(f, g))
        _GL_PROD[(f, g)] = hit
    return hit


def gl_product(x: AlgElem | Forest | Tree | str, y: AlgElem | Forest | Tree | str) -> AlgElem:
    """f ⋆ g: sum over every way of grafting the trees of f onto g or multiplying them in."""
    x, y = _as_elem(x), _as_elem(y)
    acc: dict[Forest, Fraction] = defaultdict(Fraction)
    for f, a in x.terms.items():
        for g, b in y.terms.items():
            for h, c in _gl_basis(f, g).terms.items():
                acc[h] += a * b * c
    return AlgElem(acc)


def gl_coproduct(x: AlgElem | Forest | Tree | str) -> TensorElem:
    """Split the trees of each forest into two sub-multisets in every way."""
    x = _as_elem(x)
    acc: dict[tuple[Forest, ...], Fraction] = defaultdict(Fraction)
    for f, c in x.terms.items():
        n = len(f.trees)
        for mask in range(1 << n):
            left = [f.trees[i] for i in range(n) if mask >> i & 1]
            right = [f.trees[i] for i in range(n) if not mask >> i & 1]
            acc[(Forest(left), Forest(right))] += c
    return TensorElem(2, acc)


_S_GL: dict[Forest, AlgElem] = {}


def _forest_antipode_gl(f: Forest) -> AlgElem:
    hit = _S_GL.get(f)
    if hit is not None:
        return hit
    if not f.trees:
        out = AlgElem.unit()
    else:
        out = -AlgElem.basis(f)
        for (a, b), c in gl_coproduct(f).terms.items():
            if a.trees and b.trees:
                out = out - gl_product(_forest_antipode_gl(a), AlgElem.basis(b)).scale(c)
    _S_GL[f] = out
    return out


def antipode_gl(x: AlgElem | Forest | Tree | str) -> AlgElem:
    """Antipode of the Grossman-Larson Hopf algebra by the standard recursion."""
    return _as_elem(x).map(_forest_antipode_gl)


# ------------------------------------------------------------------ pairing


def pairing(y: AlgElem | Forest | Tree | str, x: AlgElem | Forest | Tree | str) -> Fraction:
    """⟨f, g⟩ = 𝒩(f) δ_fg extended bilinearly."""
    y, x = _as_elem(y), _as_elem(x)
    total = Fraction(0)
    small, big = (y, x) if len(y) <= len(x) else (x, y)
    for f, c in small.terms.items():
        d = big.terms.get(f)
        if d:
            total += symmetry_factor(f) * c * d
    return total


def tensor_pairing(y: TensorElem, x: TensorElem) -> Fraction:
    if y.arity != x.arity:
        raise ValueError("arity mismatch")
    total = Fraction(0)
    for k, c in y.terms.items():
        d = x.terms.get(k)
        if d:
            w = 1
            for f in k:
                w *= symmetry_factor(f)
            total += w * c * d
    return total


def _reduced(t: TensorElem) -> TensorElem:
    return TensorElem(2, {k: c for k, c in t.terms.items() if k[0].trees and k[1].trees})


def iterated_coproduct(
    x: AlgElem | Forest | Tree | str, m: int, reduced: bool = False, which: str = "CK"
) -> TensorElem:
    """Δ^m by coassociative iteration on the first slot; Δ^0 is the counit."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    x = _as_elem(x)
    if which not in ("CK", "GL"):
        raise ValueError("which must be CK or GL")
    delta = ck_coproduct if which == "CK" else gl_coproduct
    if m == 0:
        return TensorElem(0, {(): counit(x)} if counit(x) else {})
    if reduced:
        x = AlgElem({f: c for f, c in x.terms.items() if f.trees})
    out = TensorElem(1, {(f,): c for f, c in x.terms.items()})
    for _ in range(m - 1):
        step = (lambda f: _reduced(delta(f))) if reduced else delta
        out = out.apply_slot(0, step)
    return out


# --------------------------------------------------------------------- words

Word = tuple  # letters are Labels (or Trees for the ψ map)


def format_word(w: Word) -> str:
    if not w:
        return "∅"
    return "".join(format_label(a) if isinstance(a, Label) else f"[{format_forest(a)}]" for a in w)


def parse_word(text: str, weights: Mapping[str, int] | None = None) -> Word:
    """Concatenated label literals; plain letters are single characters, ``{..}`` multisets."""
    out = []
    i = 0
    text = text.strip()
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "{":
            j = text.index("}", i)
            out.append(parse_label(text[i : j + 1], weights))
            i = j + 1
        else:
            out.append(parse_label(ch, weights))
            i += 1
    return tuple(out)


def _add_into(acc: dict, src: Mapping, c: Scalar = 1, suffix: Word = ()) -> None:
    for w, v in src.items():
        acc[w + suffix] += c * v


def _clean(acc: Mapping) -> dict:
    return {w: Fraction(c) for w, c in acc.items() if c != 0}


_QSH: dict[tuple[Word, Word], dict] = {}


def quasi_shuffle(w: Word, z: Word) -> dict[Word, Fraction]:
    """wa ⧢̃ zb = (wa ⧢̃ z)b + (w ⧢̃ zb)a + (w ⧢̃ z)(a∪b)."""
    w, z = tuple(w), tuple(z)
    if not w:
        return {z: Fraction(1)}
    if not z:
        return {w: Fraction(1)}
    hit = _QSH.get((w, z))
    if hit is not None:
        return hit
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    a, b = w[-1], z[-1]
    _add_into(acc, quasi_shuffle(w, z[:-1]), 1, (b,))
    _add_into(acc, quasi_shuffle(w[:-1], z), 1, (a,))
    _add_into(acc, quasi_shuffle(w[:-1], z[:-1]), 1, (multiset_label((a, b)),))
    out = _clean(acc)
    _QSH[(w, z)] = out
    return out


_SH: dict[tuple[Word, Word], dict] = {}


def shuffle(w: Word, z: Word) -> dict[Word, Fraction]:
    w, z = tuple(w), tuple(z)
    if not w:
        return {z: Fraction(1)}
    if not z:
        return {w: Fraction(1)}
    hit = _SH.get((w, z))
    if hit is not None:
        return hit
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    _add_into(acc, shuffle(w, z[:-1]), 1, (z[-1],))
    _add_into(acc, shuffle(w[:-1], z), 1, (w[-1],))
    out = _clean(acc)
    _SH[(w, z)] = out
    return out


def _sum_product(x: Mapping, y: Mapping, prod: Callable[[Word, Word], Mapping]) -> dict:
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    for w, a in x.items():
        for z, b in y.items():
            _add_into(acc, prod(w, z), a * b)
    return _clean(acc)


def _forest_to_words(f: Forest, prod: Callable, cache: dict) -> dict[Word, Fraction]:
    hit = cache.get(f)
    if hit is not None:
        return hit
    out: dict = {(): Fraction(1)}
    for t in f.trees:
        inner = _forest_to_words(Forest(t.children), prod, cache)
        tw = {w + (t.label,): c for w, c in inner.items()}
        out = _sum_product(out, tw, prod)
    cache[f] = out
    return out


_PHI: dict[Forest, dict] = {}
_PHI_T: dict[Forest, dict] = {}


def phi(f: Forest | Tree | str) -> dict[Word, Fraction]:
    """Shuffle morphism with φ([f]_γ) = φ(f)γ."""
    return _forest_to_words(_as_forest(f), shuffle, _PHI)


def phi_tilde(f: Forest | Tree | str) -> dict[Word, Fraction]:
    """Quasi-shuffle morphism with φ̃([f]_γ) = φ̃(f)γ."""
    return _forest_to_words(_as_forest(f), quasi_shuffle, _PHI_T)


def _as_forest(f: Forest | Tree | str) -> Forest:
    if isinstance(f, str):
        return parse_forest(f)
    if isinstance(f, Tree):
        return f.as_forest()
    return f


def iota(w: Word | Mapping[Word, Scalar]) -> Tree | AlgElem:
    """Word γ1…γn ↦ ladder whose root carries γn; extended linearly to word sums."""
    if isinstance(w, Mapping):
        terms = []
        for word, c in w.items():
            terms.append((iota(word).as_forest() if word else EMPTY, c))
        return AlgElem(terms)
    w = tuple(w)
    if not w:
        raise ValueError("the empty word maps to the empty forest; pass a word sum")
    t = Tree(w[0])
    for a in w[1:]:
        t = Tree(a, (t,))
    return t


_PSI: dict[Tree, dict] = {}


def psi(t: Tree | str) -> dict[Word, Fraction]:
    """ψ(t) = t + Σ ψ(t(1)) t(2) over the reduced coproduct, letters being trees."""
    if isinstance(t, str):
        t = parse_forest(t).tree()
    hit = _PSI.get(t)
    if hit is not None:
        return hit
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    acc[(t,)] += 1
    for (above, below), c in _tree_ck(t).items():
        if above.trees and below.trees:
            words: dict = {(): Fraction(1)}
            for s in above.trees:
                words = _sum_product(words, psi(s), shuffle)
            _add_into(acc, words, c, (below.tree(),))
    out = _clean(acc)
    _PSI[t] = out
    return out


def cut_bullet(f: Forest) -> list[tuple[Forest, Label]]:
    """Cuts where each tree is cut totally or just below its root, at least one of the latter.

    Returns pairs (pruned forest, joined label of the detached roots).
    """
    out = []
    n = len(f.trees)
    for mask in range(1, 1 << n):
        pruned: list[Tree] = []
        roots: list[Label] = []
        for i, t in enumerate(f.trees):
            if mask >> i & 1:
                roots.append(t.label)
                pruned.extend(t.children)
            else:
                pruned.append(t)
        out.append((Forest(pruned), multiset_label(roots)))
    return out


def _compositions(n: int) -> Iterator[tuple[int, ...]]:
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in _compositions(n - first):
            yield (first,) + rest


def _contract(w: Word, comp: tuple[int, ...]) -> Word:
    out = []
    i = 0
    for k in comp:
        out.append(multiset_label(w[i : i + k]))
        i += k
    return tuple(out)


def hoffman_exp(w: Word) -> dict[Word, Fraction]:
    """Hoffman's exponential: shuffle words to quasi-shuffle words."""
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    for comp in _compositions(len(w)):
        d = 1
        for k in comp:
            d *= factorial(k)
        acc[_contract(w, comp)] += Fraction(1, d)
    return _clean(acc)


def hoffman_log(w: Word) -> dict[Word, Fraction]:
    """Inverse of :func:`hoffman_exp`."""
    acc: dict[Word, Fraction] = defaultdict(Fraction)
    for comp in _compositions(len(w)):
        d = 1
        for k in comp:
            d *= k
        acc[_contract(w, comp)] += Fraction((-1) ** (len(w) - len(comp)), d)
    return _clean(acc)
