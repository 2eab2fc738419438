"""Enlarged alphabets, bracket polynomials and bracket-relation defects."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .forests import (
    EMPTY,
    PRODUCT,
    Forest,
    Label,
    Tree,
    attach_at,
    bracket_label,
    enumerate_forests,
    enumerate_trees,
    multiset_label,
)
from .hopf import AlgElem, TensorElem, ck_coproduct

if TYPE_CHECKING:
    from .rough_path import RoughPath

__all__ = [
    "BracketSpec",
    "bracket_polynomial",
    "consistency_defect",
    "consistency_report",
    "forest_to_trees",
    "full_labels",
    "root_label_J",
    "simple_labels",
]


def simple_labels(base: Sequence[Label], max_degree: int) -> list[Label]:
    """Atoms of the base alphabet plus every multiset of them up to the degree bound."""
    out: list[Label] = list(base)
    atoms = sorted(base, key=lambda a: a.key)
    for k in range(2, max_degree + 1):
        for combo in combinations_with_replacement(atoms, k):
            lab = multiset_label(combo)
            if lab.weight <= max_degree:
                out.append(lab)
    return sorted(set(out), key=lambda a: a.key)


def full_labels(base: Sequence[Label], max_degree: int) -> list[Label]:
    """Simple labels plus forest labels (g) for proper forests g with two or more trees."""
    out = set(simple_labels(base, max_degree))
    for g in enumerate_forests(base, max_degree):
        if len(g.trees) >= 2:
            out.add(bracket_label(g))
    return sorted(out, key=lambda a: a.key)


@dataclass(frozen=True)
class BracketSpec:
    """Base alphabet, bracket mode and truncation degree."""

    base: tuple[Label, ...]
    mode: str = "simple"
    degree: int = 2

    def __post_init__(self) -> None:
        if self.mode not in ("simple", "full"):
            raise ValueError("mode is 'simple' or 'full'")

    def labels(self) -> list[Label]:
        if self.mode == "simple":
            return simple_labels(self.base, self.degree)
        return full_labels(self.base, self.degree)


def root_label_J(f: Forest, g: Forest) -> AlgElem:
    """[f]_(g), or 0 when g is empty or a tree with more than one vertex."""
    if not g.trees or (g.is_tree and g.size > 1):
        return AlgElem()
    return AlgElem.basis(Tree(bracket_label(g), f.trees))


def _apply_J(t: TensorElem) -> AlgElem:
    acc: dict[Forest, Fraction] = defaultdict(Fraction)
    for (f, g), c in t.terms.items():
        for h, d in root_label_J(f, g).terms.items():
            acc[h] += c * d
    return AlgElem(acc)


def bracket_polynomial(f: Forest | AlgElem) -> AlgElem:
    """≪f≫ = f − J(Δ̃ f), with the reduced coproduct Δ̃."""
    x = f if isinstance(f, AlgElem) else AlgElem.basis(f)
    delta = ck_coproduct(x)
    reduced = TensorElem(2, {k: c for k, c in delta.terms.items() if k[0].trees and k[1].trees})
    return x - _apply_J(reduced)


def forest_to_trees(f: Forest | AlgElem) -> AlgElem:
    """J(Δ f) with the unreduced coproduct: expresses a forest through trees over Â."""
    x = f if isinstance(f, AlgElem) else AlgElem.basis(f)
    return _apply_J(ck_coproduct(x))


def _attach_elem(x: AlgElem, g: Forest, nu: int | str) -> AlgElem:
    return AlgElem((attach_at(h, g, nu), c) for h, c in x.terms.items())


def consistency_defect(X: RoughPath, f: Forest, g: Forest, nu: int | str, s: int, t: int) -> float:
    """|⟨•(f) ↷ν g, X⟩ − ⟨≪f≫ ↷ν g, X⟩| at the grid pair (s, t)."""
    lhs, rhs = _consistency_pair(X, f, g, nu)
    return abs(X.evaluate(lhs, s, t) - X.evaluate(rhs, s, t))


def _consistency_pair(X: RoughPath, f: Forest, g: Forest, nu: int | str) -> tuple[AlgElem, AlgElem]:
    if not f.trees:
        raise ValueError("bracket consistency needs a nonempty forest")
    if f.degree + g.degree > X.degree:
        raise ValueError(f"degree {f.degree + g.degree} exceeds truncation {X.degree}")
    lhs = _attach_elem(AlgElem.basis(Tree(bracket_label(f))), g, nu)
    rhs = _attach_elem(bracket_polynomial(f), g, nu)
    return lhs, rhs


def consistency_report(
    X: RoughPath,
    brackets: Iterable[Forest] | None = None,
    targets: Iterable[Forest] | None = None,
) -> list[tuple[Forest, Forest, int | str, float]]:
    """Max-over-dyadic-intervals defect for each (f, g, ν) instance within the truncation.

    By default f ranges over products of at least two single vertices whose
    joined label is in X's alphabet and g over ∅ and the trees of X.
    """
    labels = set(X.labels)
    if brackets is None:
        atoms = [lab for lab in X.labels if lab.kind == "atom"]
        brackets = []
        for k in range(2, X.degree + 1):
            for combo in combinations_with_replacement(atoms, k):
                ff = Forest([Tree(a) for a in combo])
                if bracket_label(ff) in labels and ff.degree <= X.degree:
                    brackets.append(ff)
    brackets = list(brackets)
    if targets is None:
        targets = [EMPTY] + [t.as_forest() for t in X.basis.trees]
    targets = list(targets)
    out = []
    for f in brackets:
        for g in targets:
            if f.degree + g.degree > X.degree:
                continue
            for nu in list(range(g.size)) + [PRODUCT]:
                lhs, rhs = _consistency_pair(X, f, g, nu)
                diff = X.evaluate_all(lhs - rhs)
                out.append((f, g, nu, float(np.max(np.abs(diff))) if diff.size else 0.0))
    return out
