"""Branched lifts of controlled paths, integral lifts and pushforwards.

Every lift is assembled the same way: each vertex ν of a target tree picks
an option (root label a^ν, forest h^ν, coefficient path), the star graft
relabels ν by a^ν and grafts h^ν onto it, and the almost rough path value is
the coefficient product at s times the driver on the grafted tree.  Single
vertices are the exact trace increments.  Sewing then restores Chen's
identity.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from math import factorial
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .brackets import consistency_report, forest_to_trees, simple_labels
from .controlled import (
    ControlledPath,
    compose_smooth,
    identity_controlled,
    integral_increments,
)
from .forests import Forest, Label, Tree, atom, multiset_label, rebuild, symmetry_factor
from .polymap import PolyMap
from .rough_path import AlmostRoughPath, ForestBasis, RoughPath, extend_labels, sew

__all__ = [
    "InconsistentBracketError",
    "LiftPlan",
    "almost_lift",
    "almost_lift_path",
    "integral_lift",
    "lift",
    "pushforward",
    "pushforward_bracket",
    "pushforward_integrand_exprs",
    "pushforward_integrands",
    "star_graft",
]


class InconsistentBracketError(ValueError):
    """The driver violates bracket consistency on the reported instances."""

    def __init__(self, msg: str, offenders: list[tuple[Forest, Forest, int | str, float]]) -> None:
        super().__init__(msg)
        self.offenders = offenders


def star_graft(t: Tree | Forest, decorations: Sequence[tuple[Label, Forest]]) -> Tree:
    """Relabel vertex ν of t (post-order) by a^ν and graft the forest h^ν onto it."""
    f = t.as_forest() if isinstance(t, Tree) else t
    if not f.is_tree:
        raise ValueError("the skeleton must be a tree")
    if len(decorations) != f.size:
        raise ValueError(f"need {f.size} decorations, got {len(decorations)}")
    relabel = [a for a, _ in decorations]
    attach = {i: h.trees for i, (_, h) in enumerate(decorations) if h.trees}
    return rebuild(f, relabel, attach).tree()


def _postorder(t: Tree) -> list[Label]:
    out: list[Label] = []

    def go(s: Tree) -> None:
        for c in s.children:
            go(c)
        out.append(s.label)

    go(t)
    return out


Option = tuple[Label, Forest, np.ndarray]


@dataclass
class LiftPlan:
    """Per-target-label vertex options and exact single-vertex traces."""

    X: RoughPath
    options: dict[Label, list[Option]]
    traces: dict[Label, np.ndarray]

    def expand(self, t: Tree) -> dict[int, np.ndarray]:
        """Driver-basis index ↦ summed coefficient path, for a tree with ≥ 2 vertices."""
        labs = _postorder(t)
        n = self.X.degree
        index = self.X.basis.index
        out: dict[int, np.ndarray] = {}
        skel = t.as_forest()

        def rec(v: int, budget: int, decs: list[tuple[Label, Forest]], coef: np.ndarray | None) -> None:
            if v == len(labs):
                tree = star_graft(skel, decs)
                idx = index.get(tree.as_forest())
                if idx is None:
                    if np.any(coef):
                        raise KeyError(f"driver has no component for {tree}")
                    return
                if idx in out:
                    out[idx] = out[idx] + coef
                else:
                    out[idx] = coef.copy()
                return
            remaining = len(labs) - v - 1
            for a, h, c in self.options.get(labs[v], ()):
                w = a.weight + h.degree
                if w + remaining > budget:
                    continue
                rec(v + 1, budget - w, decs + [(a, h)], c if coef is None else coef * c)

        rec(0, n, [], None)
        return out

    def almost_path(self, labels: Sequence[Label]) -> AlmostRoughPath:
        X = self.X
        basis = ForestBasis(labels, X.degree)
        plans = {}
        for t in basis.trees:
            if t.size >= 2:
                plans[t] = self.expand(t)
        levels = []
        for L in range(X.depth + 1):
            starts = X.starts(L)
            ends = starts + (1 << (X.depth - L))
            vals = np.zeros((len(starts), basis.size))
            vals[:, 0] = 1.0
            for t in basis.trees:
                col = basis.index[t.as_forest()]
                if t.size == 1:
                    tr = self.traces.get(t.label)
                    if tr is not None:
                        vals[:, col] = tr[ends] - tr[starts]
                    continue
                for idx, c in plans[t].items():
                    vals[:, col] += c[starts] * X.levels[L][:, idx]
            basis.complete_products(vals)
            levels.append(vals)
        x0 = {lab: float(tr[0]) for lab, tr in self.traces.items()}
        return AlmostRoughPath(basis, X.p, X.times, levels, x0)

    def value(self, t: Tree, s: int, u: int) -> float:
        if t.size < 2:
            raise ValueError("single vertices are trace increments, not almost-lift terms")
        inc = self.X.increment(s, u)
        return float(sum(c[s] * inc[idx] for idx, c in self.expand(t).items()))


def _target_labels(e: int, names: Sequence[str] | None) -> list[Label]:
    if names is None:
        return [atom(str(k + 1)) for k in range(e)]
    if len(names) != e:
        raise ValueError(f"need {e} target names")
    return [atom(str(nm)) for nm in names]


def _controlled_plan(H: ControlledPath, targets: Sequence[Label]) -> LiftPlan:
    X = H.X
    options: dict[Label, list[Option]] = {}
    for k, lab in enumerate(targets):
        opts: list[Option] = []
        for f, c in H.coeffs.items():
            if not f.trees or f.degree > X.degree:
                continue
            col = c[:, k] / symmetry_factor(f)
            if not np.any(col):
                continue
            for T, w in forest_to_trees(f).terms.items():
                tree = T.tree()
                opts.append((tree.label, Forest(tree.children), col * float(w)))
        options[lab] = opts
    traces = {lab: H.trace[:, k] for k, lab in enumerate(targets)}
    return LiftPlan(X, options, traces)


def almost_lift(H: ControlledPath, t: Tree, s: int, u: int, names: Sequence[str] | None = None) -> float:
    """The almost rough path of H on the tree t over the target letters, at the grid pair (s, u)."""
    return _controlled_plan(H, _target_labels(H.dim, names)).value(t, s, u)


def almost_lift_path(H: ControlledPath, names: Sequence[str] | None = None) -> AlmostRoughPath:
    targets = _target_labels(H.dim, names)
    return _controlled_plan(H, targets).almost_path(targets)


def lift(H: ControlledPath, names: Sequence[str] | None = None, tol: float = 1e-5) -> RoughPath:
    """Rough path lift of H: sewing of the almost lift."""
    return sew(almost_lift_path(H, names), tol)


def _integral_plan(
    integrands: Mapping[Label, Mapping[Label, ControlledPath]], X: RoughPath, x0: Mapping[Label, float] | None
) -> LiftPlan:
    options: dict[Label, list[Option]] = {}
    traces: dict[Label, np.ndarray] = {}
    for lab, per_source in integrands.items():
        opts: list[Option] = []
        for a, Hk in per_source.items():
            if Hk.dim != 1:
                raise ValueError("integral lift expects scalar integrands per target label")
            for f, c in Hk.coeffs.items():
                if f.degree + a.weight > X.degree:
                    continue
                col = c[:, 0] / symmetry_factor(f)
                if np.any(col):
                    opts.append((a, f, col))
        options[lab] = opts
        tr = np.zeros(X.npoints)
        if per_source:
            tr[1:] = np.cumsum(integral_increments(dict(per_source), X)[:, 0])
        tr += (x0 or {}).get(lab, 0.0)
        traces[lab] = tr
    return LiftPlan(X, options, traces)


def integral_lift(
    integrands: Mapping[Label, Mapping[Label, ControlledPath]],
    X: RoughPath,
    x0: Mapping[Label, float] | None = None,
    tol: float = 1e-5,
) -> RoughPath:
    """Lift of the integrals Z^k = Σ_a ∫ H^{k,a} dX^a over the target labels k.

    Vertex ν labelled k picks a source label a and a forest f with weight
    𝒩(f)^{-1} H^{k,a}_f and is replaced by [f]_a; no bracket components of
    the driver beyond its own alphabet are touched.
    """
    targets = sorted(integrands, key=lambda a: a.key)
    return sew(_integral_plan(integrands, X, x0).almost_path(targets), tol)


# ------------------------------------------------------------- pushforwards


def _check_consistency(X: RoughPath, tol: float) -> None:
    labels = set(X.basis.labels)
    if not any(lab.kind != "atom" for lab in labels):
        return
    bad = [row for row in consistency_report(X) if row[3] > tol]
    if bad:
        f, g, nu, d = max(bad, key=lambda r: r[3])
        raise InconsistentBracketError(
            f"bracket consistency fails for f={f}, g={g}, nu={nu}: defect {d:.3e} > {tol:.1e}", bad
        )


def _with_simple_brackets(X: RoughPath) -> RoughPath:
    needed = simple_labels(X.letters(), X.degree)
    if set(needed) <= set(X.basis.labels):
        return X
    return extend_labels(X, needed)


def pushforward(
    fmap: PolyMap,
    X: RoughPath,
    names: Sequence[str] | None = None,
    tol: float = 1e-5,
    consistency_tol: float = 1e-8,
) -> RoughPath:
    """f_*X: lift of the controlled path f(X) through the simple bracket extension.

    Missing simple brackets are taken to be zero, which is the geometric
    case; the consistency pre-check rejects drivers for which that is wrong.
    """
    Xs = _with_simple_brackets(X)
    _check_consistency(Xs, consistency_tol)
    H = compose_smooth(fmap, identity_controlled(Xs))
    return lift(H, names, tol)


def _multi_index(lab: Label, letters: Sequence[Label]) -> list[int]:
    return [letters.index(m) for m in lab.atoms()]


def pushforward_integrand_exprs(
    fmap: PolyMap, letters: Sequence[Label], n: int, names: Sequence[str] | None = None
) -> dict[Label, dict[Label, PolyMap]]:
    """Symbolic integrands of f(X) and of its simple brackets, by target and source label.

    Letter k integrates ∂_C f^k / 𝒩(C) against X^(C).  A multiset K = (k1…km)
    integrates Σ_{c1⊎…⊎cm = C} Π_i ∂_{ci} f^{ki} / 𝒩(ci) against X^(C).
    """
    if fmap.dim_in != len(letters):
        raise ValueError(f"map takes {fmap.dim_in} inputs, driver has {len(letters)} letters")
    letters = list(letters)
    simple = simple_labels(letters, n)
    targets = _target_labels(fmap.dim_out, names)
    first: dict[int, dict[Label, sp.Expr]] = {}
    for k in range(fmap.dim_out):
        per: dict[Label, sp.Expr] = {}
        for C in simple:
            d = fmap[k].diff(*_multi_index(C, letters)).exprs[0] / _label_sym(C)
            if d != 0:
                per[C] = d
        first[k] = per
    exprs: dict[Label, dict[Label, sp.Expr]] = {lab: first[k] for k, lab in enumerate(targets)}
    for K in simple_labels(targets, n):
        if K.kind == "multiset":
            exprs[K] = _bracket_terms([targets.index(m) for m in K.atoms()], first, n)
    return {
        lab: {C: PolyMap([e], fmap.variables, exact=fmap.exact) for C, e in per.items()}
        for lab, per in exprs.items()
    }


def pushforward_integrands(
    fmap: PolyMap, X: RoughPath, names: Sequence[str] | None = None
) -> dict[Label, dict[Label, ControlledPath]]:
    """The symbolic integrands composed with the trace of X as controlled paths."""
    Id = identity_controlled(X)
    table = pushforward_integrand_exprs(fmap, X.letters(), X.degree, names)
    return {lab: {C: compose_smooth(m, Id) for C, m in per.items()} for lab, per in table.items()}


def _label_sym(C: Label) -> int:
    """𝒩 of the multiset of atoms of C: product of factorials of multiplicities."""
    out = 1
    for c in Counter(C.atoms()).values():
        out *= factorial(c)
    return out


def _bracket_terms(ks: Sequence[int], first: Mapping[int, Mapping[Label, sp.Expr]], n: int) -> dict[Label, sp.Expr]:
    acc: dict[Label, sp.Expr] = defaultdict(lambda: sp.Integer(0))

    def rec(i: int, chosen: list[Label], term: sp.Expr, budget: int) -> None:
        if i == len(ks):
            acc[multiset_label(chosen)] += term
            return
        for c, e in first[ks[i]].items():
            if c.weight <= budget - (len(ks) - i - 1):
                rec(i + 1, chosen + [c], term * e, budget - c.weight)

    rec(0, [], sp.Integer(1), n)
    return {C: sp.expand(e) for C, e in acc.items() if sp.expand(e) != 0}


def pushforward_bracket(
    fmap: PolyMap,
    X: RoughPath,
    names: Sequence[str] | None = None,
    tol: float = 1e-5,
    consistency_tol: float = 1e-8,
) -> RoughPath:
    """Simple bracket extension of f_*X over the target letters and their multisets."""
    Xs = _with_simple_brackets(X)
    _check_consistency(Xs, consistency_tol)
    integrands = pushforward_integrands(fmap, Xs, names)
    letters = Xs.letters()
    start = fmap(Xs.trace()[0, [Xs.basis.labels.index(a) for a in letters]])
    targets = _target_labels(fmap.dim_out, names)
    x0 = {lab: float(start[k]) for k, lab in enumerate(targets)}
    return integral_lift(integrands, Xs, x0, tol)
