"""Decorated non-planar rooted forests in canonical form.

Trees and forests are hash-consed: two structurally isomorphic labelled
forests are the same Python object, so equality is identity and hashing is
cheap.  Vertices are addressed by their post-order index inside the
canonical form (children visited in canonical order, then the root; trees of
a forest in canonical order).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from math import factorial
from typing import Iterable, Mapping, Sequence

__all__ = [
    "EMPTY",
    "PRODUCT",
    "Forest",
    "Label",
    "ParseError",
    "Tree",
    "admissible_cuts",
    "all_nontotal_cuts",
    "atom",
    "attach_at",
    "bracket_label",
    "enumerate_forests",
    "enumerate_trees",
    "format_forest",
    "format_label",
    "graft_ways",
    "multiset_label",
    "parse_forest",
    "parse_label",
    "parse_tree",
    "postorder_labels",
    "rebuild",
    "symmetry_factor",
]

PRODUCT = "product"


class ParseError(ValueError):
    """Raised for malformed forest literals."""


def _natural_key(name: str) -> tuple:
    parts = re.split(r"(\d+)", name)
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts if p)


@dataclass(frozen=True, eq=False)
class Label:
    """A vertex decoration: an atom, a multiset of atoms, or a wrapped forest."""

    kind: str
    name: str = ""
    atom_weight: int = 1
    members: tuple[Label, ...] = ()
    forest: Forest | None = None
    key: tuple = field(init=False, repr=False)
    weight: int = field(init=False, repr=False)
    _hash: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind == "atom":
            if self.atom_weight < 1:
                raise ValueError("atom weights must be positive")
            key = (0, _natural_key(self.name), self.name, self.atom_weight)
            weight = self.atom_weight
        elif self.kind == "multiset":
            if len(self.members) < 2 or any(m.kind != "atom" for m in self.members):
                raise ValueError("a multiset label needs at least two atoms")
            key = (1, tuple(m.key for m in self.members))
            weight = sum(m.weight for m in self.members)
        elif self.kind == "forest":
            if self.forest is None or not self.forest.trees:
                raise ValueError("a forest label wraps a nonempty forest")
            key = (2, self.forest.key)
            weight = self.forest.degree
        else:
            raise ValueError(f"unknown label kind {self.kind!r}")
        object.__setattr__(self, "key", key)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "_hash", hash(key))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Label) and self.key == other.key

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: Label) -> bool:
        return self.key < other.key

    def atoms(self) -> tuple[Label, ...]:
        """Atoms of an atom or multiset label, with multiplicity."""
        if self.kind == "atom":
            return (self,)
        if self.kind == "multiset":
            return self.members
        raise ValueError("forest labels have no flat atom content")

    def __str__(self) -> str:
        return format_label(self)

    def __repr__(self) -> str:
        return f"Label({format_label(self)!r})"


def atom(name: str, weight: int = 1) -> Label:
    return Label("atom", name=str(name), atom_weight=weight)


def multiset_label(labels: Iterable[Label]) -> Label:
    """Join atoms and multisets by multiset union; a singleton is its atom."""
    atoms: list[Label] = []
    for lab in labels:
        atoms.extend(lab.atoms())
    if not atoms:
        raise ValueError("empty multiset label")
    if len(atoms) == 1:
        return atoms[0]
    return Label("multiset", members=tuple(sorted(atoms, key=lambda a: a.key)))


def bracket_label(g: Forest) -> Label:
    """The label (g): multiset when g is a product of flat single vertices."""
    if not g.trees:
        raise ValueError("the empty forest has no bracket label")
    if all(not t.children and t.label.kind != "forest" for t in g.trees):
        return multiset_label(t.label for t in g.trees)
    return Label("forest", forest=g)


class Tree:
    """A labelled rooted tree with canonically ordered children."""

    __slots__ = ("label", "children", "degree", "size", "key", "_hash")
    _cache: dict[tuple, Tree] = {}

    label: Label
    children: tuple[Tree, ...]
    degree: int
    size: int
    key: tuple

    def __new__(cls, label: Label, children: Iterable[Tree] = ()) -> Tree:
        kids = tuple(sorted(children, key=_tree_key))
        ck = (label, kids)
        hit = cls._cache.get(ck)
        if hit is not None:
            return hit
        self = object.__new__(cls)
        self.label = label
        self.children = kids
        self.degree = label.weight + sum(c.degree for c in kids)
        self.size = 1 + sum(c.size for c in kids)
        self.key = (self.degree, label.key, tuple(c.key for c in kids))
        self._hash = hash(self.key)
        cls._cache[ck] = self
        return self

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: Tree) -> bool:
        return self.key < other.key

    def __reduce__(self):
        return (Tree, (self.label, self.children))

    def as_forest(self) -> Forest:
        return Forest((self,))

    def __str__(self) -> str:
        return _format_tree(self)

    def __repr__(self) -> str:
        return f"Tree({_format_tree(self)!r})"


def _tree_key(t: Tree) -> tuple:
    return t.key


class Forest:
    """A finite multiset of trees; the empty forest is the unit."""

    __slots__ = ("trees", "degree", "size", "key", "_hash")
    _cache: dict[tuple, Forest] = {}

    trees: tuple[Tree, ...]
    degree: int
    size: int
    key: tuple

    def __new__(cls, trees: Iterable[Tree] = ()) -> Forest:
        ts = tuple(sorted(trees, key=_tree_key))
        hit = cls._cache.get(ts)
        if hit is not None:
            return hit
        self = object.__new__(cls)
        self.trees = ts
        self.degree = sum(t.degree for t in ts)
        self.size = sum(t.size for t in ts)
        self.key = (self.degree, tuple(t.key for t in ts))
        self._hash = hash(self.key)
        cls._cache[ts] = self
        return self

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: Forest) -> bool:
        return self.key < other.key

    def __mul__(self, other: Forest) -> Forest:
        return Forest(self.trees + other.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def __reduce__(self):
        return (Forest, (self.trees,))

    @property
    def is_tree(self) -> bool:
        return len(self.trees) == 1

    def tree(self) -> Tree:
        if len(self.trees) != 1:
            raise ValueError(f"{self} is not a single tree")
        return self.trees[0]

    def __str__(self) -> str:
        return format_forest(self)

    def __repr__(self) -> str:
        return f"Forest({format_forest(self)!r})"


EMPTY = Forest(())


# ---------------------------------------------------------------- structure


def symmetry_factor(f: Forest | Tree) -> int:
    """Number of label-preserving automorphisms."""
    if isinstance(f, Tree):
        return _tree_symmetry(f)
    out = 1
    for t, k in Counter(f.trees).items():
        out *= factorial(k) * _tree_symmetry(t) ** k
    return out


_SYM: dict[Tree, int] = {}


def _tree_symmetry(t: Tree) -> int:
    hit = _SYM.get(t)
    if hit is None:
        hit = symmetry_factor(Forest(t.children))
        _SYM[t] = hit
    return hit


def postorder_labels(f: Forest) -> list[Label]:
    out: list[Label] = []

    def go(t: Tree) -> None:
        for c in t.children:
            go(c)
        out.append(t.label)

    for t in f.trees:
        go(t)
    return out


def rebuild(
    f: Forest,
    relabel: Sequence[Label | None] | None = None,
    attach: Mapping[int, Sequence[Tree]] | None = None,
) -> Forest:
    """Relabel vertices and graft extra trees onto them, by post-order index."""
    attach = attach or {}
    counter = 0

    def go(t: Tree) -> Tree:
        nonlocal counter
        kids = [go(c) for c in t.children]
        i = counter
        counter += 1
        lab = t.label
        if relabel is not None and relabel[i] is not None:
            lab = relabel[i]
        return Tree(lab, kids + list(attach.get(i, ())))

    return Forest([go(t) for t in f.trees])


def attach_at(f: Forest, g: Forest, nu: int | str) -> Forest:
    """Graft every root of f onto vertex nu of g, or multiply when nu is PRODUCT."""
    if nu == PRODUCT:
        return f * g
    if not isinstance(nu, int) or not 0 <= nu < g.size:
        raise IndexError(f"vertex {nu!r} is not a vertex of {g}")
    return rebuild(g, attach={nu: f.trees})


def graft_ways(f: Forest, g: Forest) -> list[Forest]:
    """All (#g + 1)^k ways of grafting or multiplying the k trees of f onto g."""
    targets: list[int | str] = list(range(g.size)) + [PRODUCT]
    out = []
    for choice in product(targets, repeat=len(f.trees)):
        attach: dict[int, list[Tree]] = {}
        loose = []
        for t, nu in zip(f.trees, choice):
            if nu == PRODUCT:
                loose.append(t)
            else:
                attach.setdefault(nu, []).append(t)
        out.append(Forest(loose) * rebuild(g, attach=attach))
    return out


_CUTS: dict[Tree, list[tuple[tuple[Tree, ...], Tree]]] = {}


def _nontrivial_cuts(t: Tree) -> list[tuple[tuple[Tree, ...], Tree]]:
    """Admissible cuts other than the total one, as (pruned trees, trunk)."""
    hit = _CUTS.get(t)
    if hit is not None:
        return hit
    per_child = []
    for c in t.children:
        opts: list[tuple[tuple[Tree, ...], Tree | None]] = [((c,), None)]
        opts.extend(_nontrivial_cuts(c))
        per_child.append(opts)
    out = []
    for combo in product(*per_child):
        above: tuple[Tree, ...] = ()
        kids = []
        for pruned, trunk in combo:
            above += pruned
            if trunk is not None:
                kids.append(trunk)
        out.append((above, Tree(t.label, kids)))
    _CUTS[t] = out
    return out


def admissible_cuts(t: Tree) -> list[tuple[Forest, Forest]]:
    """Pairs (pruned forest above the cut, part containing the root), total cut last."""
    out = [(Forest(above), trunk.as_forest()) for above, trunk in _nontrivial_cuts(t)]
    out.append((t.as_forest(), EMPTY))
    return out


def all_nontotal_cuts(t: Tree) -> list[tuple[int, Forest]]:
    """Every edge subset with its size and the forest left after deleting it."""

    def go(s: Tree) -> list[tuple[int, Tree, tuple[Tree, ...]]]:
        per_child = []
        for c in s.children:
            opts = []
            for k, root, loose in go(c):
                opts.append((k, root, loose, True))
                opts.append((k + 1, root, loose, False))
            per_child.append(opts)
        out = []
        for combo in product(*per_child):
            k = 0
            kids = []
            loose: tuple[Tree, ...] = ()
            for kc, root, lc, keep in combo:
                k += kc
                loose += lc
                if keep:
                    kids.append(root)
                else:
                    loose += (root,)
            out.append((k, Tree(s.label, kids), loose))
        return out

    return [(k, Forest((root,) + loose)) for k, root, loose in go(t)]


# -------------------------------------------------------------- enumeration


def enumerate_trees(labels: Sequence[Label], max_degree: int) -> list[Tree]:
    """All trees over the labels with degree between 1 and max_degree, sorted."""
    trees, _ = _enumerate(tuple(labels), max_degree)
    return trees


def enumerate_forests(labels: Sequence[Label], max_degree: int) -> list[Forest]:
    """All forests (including the empty one) of degree at most max_degree, sorted."""
    _, forests = _enumerate(tuple(labels), max_degree)
    return forests


_ENUM: dict[tuple, tuple[list[Tree], list[Forest]]] = {}


def _enumerate(labels: tuple[Label, ...], n: int) -> tuple[list[Tree], list[Forest]]:
    ck = (frozenset(labels), n)
    hit = _ENUM.get(ck)
    if hit is not None:
        return list(hit[0]), list(hit[1])
    by_deg: dict[int, list[Forest]] = {0: [EMPTY]}
    trees: list[Tree] = []
    for d in range(1, n + 1):
        for lab in labels:
            w = lab.weight
            if w <= d:
                trees.extend(Tree(lab, f.trees) for f in by_deg[d - w])
        pool = sorted(set(trees), key=_tree_key)
        found: list[Forest] = []

        def rec(start: int, remaining: int, acc: list[Tree]) -> None:
            if remaining == 0:
                found.append(Forest(acc))
                return
            for i in range(start, len(pool)):
                if pool[i].degree <= remaining:
                    rec(i, remaining - pool[i].degree, acc + [pool[i]])

        rec(0, d, [])
        by_deg[d] = found
    trees = sorted(set(trees), key=_tree_key)
    forests = sorted({f for fs in by_deg.values() for f in fs}, key=lambda f: f.key)
    _ENUM[ck] = (trees, forests)
    return list(trees), list(forests)


# ------------------------------------------------------------------ grammar


def format_label(lab: Label) -> str:
    if lab.kind == "atom":
        return lab.name
    if lab.kind == "multiset":
        names = [m.name for m in lab.members]
        sep = "" if all(len(n) == 1 for n in names) else " "
        return "{" + sep.join(names) + "}"
    assert lab.forest is not None
    return "<" + format_forest(lab.forest) + ">"


def _format_tree(t: Tree) -> str:
    s = format_label(t.label)
    if t.children:
        s += "(" + ",".join(_format_tree(c) for c in t.children) + ")"
    return s


def format_forest(f: Forest | Tree) -> str:
    if isinstance(f, Tree):
        return _format_tree(f)
    if not f.trees:
        return "0"
    return "*".join(_format_tree(t) for t in f.trees)


_IDENT = re.compile(r"[A-Za-z0-9_]+")


class _Parser:
    def __init__(self, text: str, weights: Mapping[str, int] | None) -> None:
        self.text = text
        self.pos = 0
        self.weights = dict(weights or {})

    def fail(self, msg: str) -> ParseError:
        return ParseError(f"{msg} at position {self.pos} in {self.text!r}")

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise self.fail(f"expected {ch!r}")
        self.pos += 1

    def ident(self) -> str:
        self.skip()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            raise self.fail("expected a letter name")
        self.pos = m.end()
        return m.group()

    def atom(self, name: str) -> Label:
        return atom(name, self.weights.get(name, 1))

    def label(self) -> Label:
        ch = self.peek()
        if ch == "{":
            self.pos += 1
            tokens = []
            while self.peek() not in ("}", ""):
                if self.peek() == ",":
                    self.pos += 1
                    continue
                tokens.append(self.ident())
            self.expect("}")
            if len(tokens) == 1 and len(tokens[0]) > 1:
                tokens = list(tokens[0])
            if not tokens:
                raise self.fail("empty multiset label")
            return multiset_label(self.atom(t) for t in tokens)
        if ch == "<":
            self.pos += 1
            inner = self.forest()
            self.expect(">")
            if not inner.trees:
                raise self.fail("empty forest label")
            return bracket_label(inner)
        return self.atom(self.ident())

    def tree(self) -> Tree:
        lab = self.label()
        kids = []
        if self.peek() == "(":
            self.pos += 1
            kids.append(self.tree())
            while self.peek() == ",":
                self.pos += 1
                kids.append(self.tree())
            self.expect(")")
        return Tree(lab, kids)

    def forest(self) -> Forest:
        self.skip()
        m = _IDENT.match(self.text, self.pos)
        if m and m.group() == "0" and self.text[m.end() : m.end() + 1] not in ("(",):
            self.pos = m.end()
            return EMPTY
        trees = [self.tree()]
        while self.peek() == "*":
            self.pos += 1
            trees.append(self.tree())
        return Forest(trees)


def parse_forest(text: str, weights: Mapping[str, int] | None = None) -> Forest:
    """Parse a forest literal such as ``a(b(d),c)*e``; ``0`` is the empty forest."""
    p = _Parser(text, weights)
    f = p.forest()
    if p.peek():
        raise p.fail("trailing input")
    return f


def parse_tree(text: str, weights: Mapping[str, int] | None = None) -> Tree:
    f = parse_forest(text, weights)
    if not f.is_tree:
        raise ParseError(f"{text!r} is not a single tree")
    return f.trees[0]


def parse_label(text: str, weights: Mapping[str, int] | None = None) -> Label:
    p = _Parser(text, weights)
    lab = p.label()
    if p.peek():
        raise p.fail("trailing input")
    return lab
