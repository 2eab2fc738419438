"""Controlled paths, rough integrals, RDE coefficients and the Davie scheme.

Coefficient paths are indexed by forests over the atoms of the driver; the
empty forest carries the trace.  All sums over labelled forests are weighted
by inverse symmetry factors, matching the pairing.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import product
from math import factorial
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.utilities.iterables import multiset_partitions

from .forests import EMPTY, Forest, Label, Tree, bracket_label, graft_ways, multiset_label, symmetry_factor
from .polymap import PolyMap
from .rough_path import RoughPath

__all__ = [
    "ControlledPath",
    "VectorFields",
    "compose_smooth",
    "controlled_expansion_defect",
    "davie_residuals",
    "davie_solve",
    "identity_controlled",
    "integral_increments",
    "kelly_change_of_variable_defect",
    "kelly_function_defect",
    "multiply_controlled",
    "promote_integral",
    "quasi_change_of_variable_defect",
    "quasi_integral_bracket",
    "quasi_rde_bracket",
    "rde_coefficients",
    "rough_integral",
]


@dataclass
class ControlledPath:
    """Trace and Gubinelli derivatives on the finest grid of the reference path."""

    X: RoughPath
    coeffs: dict[Forest, np.ndarray]
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        tr = self.coeffs[EMPTY]
        self.dim = tr.shape[1]
        for f, v in self.coeffs.items():
            if v.shape != (self.X.npoints, self.dim):
                raise ValueError(f"coefficient {f} has shape {v.shape}")
            if any(lab.kind != "atom" for t in f.trees for lab in _labels(t)):
                raise ValueError(f"coefficients live on forests over the base letters, got {f}")

    @property
    def trace(self) -> np.ndarray:
        return self.coeffs[EMPTY]

    def coefficient(self, f: Forest) -> np.ndarray | None:
        return self.coeffs.get(f)

    def component(self, k: int) -> ControlledPath:
        return ControlledPath(self.X, {f: v[:, k : k + 1] for f, v in self.coeffs.items()})

    @staticmethod
    def stack(paths: Sequence[ControlledPath]) -> ControlledPath:
        X = paths[0].X
        keys: list[Forest] = []
        for pth in paths:
            keys.extend(f for f in pth.coeffs if f not in keys)
        out = {}
        for f in keys:
            blocks = [pth.coeffs.get(f, np.zeros((X.npoints, pth.dim))) for pth in paths]
            out[f] = np.concatenate(blocks, axis=1)
        return ControlledPath(X, out)


def _labels(t: Tree) -> Iterable[Label]:
    yield t.label
    for c in t.children:
        yield from _labels(c)


def _base_forests(X: RoughPath, max_degree: int) -> list[Forest]:
    atoms = set(X.letters())
    return [
        f
        for f in X.basis.forests
        if f.degree <= max_degree and all(lab in atoms for t in f.trees for lab in _labels(t))
    ]


def identity_controlled(X: RoughPath, x0: Sequence[float] | None = None) -> ControlledPath:
    """The trace of X as a path controlled by X, with derivative δ on single vertices."""
    atoms = X.letters()
    tr = X.trace()[:, [X.basis.labels.index(a) for a in atoms]]
    if x0 is not None:
        tr = tr - tr[0] + np.asarray(x0, dtype=float)
    coeffs = {EMPTY: tr}
    if X.degree >= 2:
        for k, a in enumerate(atoms):
            e = np.zeros((X.npoints, len(atoms)))
            e[:, k] = 1.0
            coeffs[Tree(a).as_forest()] = e
    return ControlledPath(X, coeffs)


def controlled_expansion_defect(H: ControlledPath, f: Forest, s: int, t: int) -> float:
    """max_k |H_{f;t} − Σ_g 𝒩(g)^{-1} Σ_{h ∈ g↷f} H_{h;s} X^g_{st}|."""
    X = H.X
    n = X.degree
    if f.degree > n - 1:
        raise ValueError("expansion is defined for |f| <= ⌊p⌋ − 1")
    inc = X.increment(s, t)
    approx = np.zeros(H.dim)
    for g in _base_forests(X, n - 1 - f.degree):
        xg = inc[X.basis.index[g]]
        if xg == 0.0:
            continue
        w = xg / symmetry_factor(g)
        for h in graft_ways(g, f):
            c = H.coeffs.get(h)
            if c is not None:
                approx += w * c[s]
    target = H.coeffs.get(f)
    target = target[t] if target is not None else np.zeros(H.dim)
    return float(np.max(np.abs(target - approx)))


def _contract_all(tensor: np.ndarray, vectors: Sequence[np.ndarray]) -> np.ndarray:
    out = tensor
    for v in vectors:
        out = np.einsum("no...i,ni->no...", out, v)
    return out


def _set_partitions(n: int) -> list[list[list[int]]]:
    if n == 0:
        return [[]]
    return [list(map(list, p)) for p in multiset_partitions(list(range(n)))]


def compose_smooth(fmap: PolyMap, H: ControlledPath, max_degree: int | None = None) -> ControlledPath:
    """Controlled structure of fmap(H): sum over set partitions of the factors of f."""
    if fmap.dim_in != H.dim:
        raise ValueError(f"map takes {fmap.dim_in} inputs, path has dimension {H.dim}")
    X = H.X
    n = X.degree if max_degree is None else max_degree
    tr = H.trace
    forests = [f for f in _base_forests(X, n - 1) if f.trees]
    orders = sorted({m for f in forests for m in range(1, len(f.trees) + 1)})
    tensors = {m: fmap.derivative_tensor(tr, m) for m in orders}
    coeffs = {EMPTY: fmap(tr)}
    for f in forests:
        acc = np.zeros((X.npoints, fmap.dim_out))
        hit = False
        for part in _set_partitions(len(f.trees)):
            vecs = []
            for block in part:
                sub = Forest([f.trees[i] for i in block])
                c = H.coeffs.get(sub)
                if c is None:
                    break
                vecs.append(c)
            else:
                acc += _contract_all(tensors[len(part)], vecs)
                hit = True
        if hit and np.any(acc):
            coeffs[f] = acc
    return ControlledPath(X, coeffs)


def multiply_controlled(paths: Sequence[ControlledPath]) -> ControlledPath:
    """Product of scalar controlled paths."""
    stacked = ControlledPath.stack(paths)
    xs = sp.symbols(f"u1:{len(paths) + 1}", real=True)
    mono = PolyMap([sp.Mul(*xs)], xs)
    return compose_smooth(mono, stacked)


# ---------------------------------------------------------------- integrals


def _check_integrand(integrand: Mapping[Label, ControlledPath], X: RoughPath) -> int:
    dims = {H.dim for H in integrand.values()}
    if len(dims) != 1:
        raise ValueError("integrands must share a dimension")
    for lab, H in integrand.items():
        if H.X.npoints != X.npoints:
            raise ValueError("integrand and driver live on different grids")
        if Tree(lab).as_forest() not in X.basis.index:
            raise KeyError(f"driver has no component for label {lab}")
    return dims.pop()


def integral_increments(
    integrand: Mapping[Label, ControlledPath], X: RoughPath, level: int | None = None
) -> np.ndarray:
    """Local expansions Σ_a Σ_f 𝒩(f)^{-1} H^a_{f;u} X^{[f]_a}_{uv} on each level-L cell."""
    e = _check_integrand(integrand, X)
    L = X.depth if level is None else level
    starts = X.starts(L)
    vals = X.levels[L]
    out = np.zeros((len(starts), e))
    for lab, H in integrand.items():
        for f, c in H.coeffs.items():
            if f.degree + lab.weight > X.degree:
                continue
            idx = X.basis.index.get(Tree(lab, f.trees).as_forest())
            if idx is None:
                continue
            out += c[starts] * (vals[:, idx] / symmetry_factor(f))[:, None]
    return out


def rough_integral(
    integrand: Mapping[Label, ControlledPath],
    X: RoughPath,
    s: int,
    t: int,
    tol: float | None = None,
) -> np.ndarray:
    """∫_s^t ⟨H_a, dX^a⟩ as a sum of local expansions over the finest cells.

    When ``tol`` is given, the sum over the next-coarser cells must agree
    within tol, otherwise a RuntimeError reports the discrepancy.
    """
    fine = integral_increments(integrand, X)[s:t].sum(axis=0)
    if tol is not None and X.depth >= 1:
        span = 1 << 1
        if s % span or t % span:
            raise ValueError("convergence check needs endpoints on the coarser grid")
        coarse = integral_increments(integrand, X, X.depth - 1)[s // span : t // span].sum(axis=0)
        gap = float(np.max(np.abs(fine - coarse)))
        if gap > tol:
            raise RuntimeError(f"rough integral not converged: refinement gap {gap:.3e} > {tol:.1e}")
    return fine


def promote_integral(
    integrand: Mapping[Label, ControlledPath], X: RoughPath, y0: Sequence[float] | None = None
) -> ControlledPath:
    """The integral as a controlled path: [f]_a ↦ H^a_f, zero on proper forests."""
    inc = integral_increments(integrand, X)
    e = inc.shape[1]
    tr = np.zeros((X.npoints, e))
    if y0 is not None:
        tr[0] = y0
    tr[1:] = tr[0] + np.cumsum(inc, axis=0)
    coeffs = {EMPTY: tr}
    atoms = set(X.letters())
    for lab, H in integrand.items():
        if lab not in atoms:
            continue
        for f, c in H.coeffs.items():
            if f.degree + lab.weight <= X.degree - 1:
                key = Tree(lab, f.trees).as_forest()
                coeffs[key] = coeffs.get(key, 0) + c
    return ControlledPath(X, coeffs)


# --------------------------------------------------------------- RDE fields


class VectorFields:
    """Vector fields F_a: ℝ^e → ℝ^e indexed by labels, with cached elementary differentials."""

    def __init__(self, fields: Mapping[Label, PolyMap]) -> None:
        self.fields = dict(fields)
        dims = {(F.dim_in, F.dim_out) for F in self.fields.values()}
        if len(dims) > 1 or any(a != b for a, b in dims):
            raise ValueError("vector fields must all map ℝ^e to ℝ^e")
        self.dim = next(iter(dims))[0] if dims else 0
        self._cache: dict[Tree, PolyMap | None] = {}

    @classmethod
    def of(cls, F: VectorFields | Mapping[Label, PolyMap]) -> VectorFields:
        return F if isinstance(F, VectorFields) else cls(F)

    def variables(self) -> tuple[sp.Symbol, ...]:
        return next(iter(self.fields.values())).variables

    def elementary(self, t: Tree) -> PolyMap | None:
        """F_t, or None when some label of t has no field."""
        if t in self._cache:
            return self._cache[t]
        Fa = self.fields.get(t.label)
        if Fa is None:
            out = None
        else:
            kids = [self.elementary(c) for c in t.children]
            if any(k is None for k in kids):
                out = None
            elif not kids:
                out = Fa
            else:
                comps = []
                for r in range(self.dim):
                    total = sp.Integer(0)
                    for ks in product(range(self.dim), repeat=len(kids)):
                        term = Fa.diff(*ks).exprs[r]
                        if term == 0:
                            continue
                        for k, kid in zip(ks, kids):
                            term = term * kid.exprs[k]
                        total += term
                    comps.append(total)
                out = PolyMap(comps, Fa.variables, exact=Fa.exact)
        self._cache[t] = out
        return out


def rde_coefficients(F: VectorFields | Mapping[Label, PolyMap], t: Tree | None) -> PolyMap:
    """F_∅ = id and F_[t1…tn]_a = ∂_{k1…kn}F_a F^{k1}_{t1}⋯F^{kn}_{tn}."""
    F = VectorFields.of(F)
    if t is None:
        return PolyMap.identity(F.dim, F.variables())
    out = F.elementary(t)
    if out is None:
        return PolyMap([0] * F.dim, F.variables())
    return out


def davie_solve(
    F: VectorFields | Mapping[Label, PolyMap], X: RoughPath, y0: Sequence[float]
) -> ControlledPath:
    """One Davie step per finest cell: Y_t = Y_s + Σ_t 𝒩(t)^{-1} F_t(Y_s) X^t_st."""
    F = VectorFields.of(F)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (F.dim,):
        raise ValueError(f"initial value must have {F.dim} components")
    plan = []
    for t in X.basis.trees:
        Ft = F.elementary(t)
        if Ft is not None:
            plan.append((X.basis.index[t.as_forest()], Ft.scale(sp.Rational(1, symmetry_factor(t)))))
    Y = np.zeros((X.npoints, F.dim))
    Y[0] = y0
    if plan:
        stacked = PolyMap.stack([m for _, m in plan])
        idx = np.array([i for i, _ in plan])
        cells = X.levels[X.depth][:, idx]
        for k in range(X.npoints - 1):
            vals = stacked.point(Y[k]).reshape(len(plan), F.dim)
            Y[k + 1] = Y[k] + cells[k] @ vals
    else:
        Y[:] = y0
    coeffs = {EMPTY: Y}
    atoms = set(X.letters())
    for t in X.basis.trees:
        if t.degree <= X.degree - 1 and all(lab in atoms for lab in _labels(t)):
            Ft = F.elementary(t)
            if Ft is not None:
                coeffs[t.as_forest()] = Ft(Y)
    return ControlledPath(X, coeffs)


def davie_residuals(
    F: VectorFields | Mapping[Label, PolyMap], X: RoughPath, Y: np.ndarray, levels: Iterable[int]
) -> dict[int, float]:
    """max over level-L cells of |Y_st − Σ_t 𝒩(t)^{-1} F_t(Y_s) X^t_st|."""
    F = VectorFields.of(F)
    out = {}
    for L in levels:
        starts = X.starts(L)
        ends = starts + (1 << (X.depth - L))
        pred = np.zeros((len(starts), F.dim))
        for t in X.basis.trees:
            Ft = F.elementary(t)
            if Ft is None:
                continue
            xt = X.levels[L][:, X.basis.index[t.as_forest()]]
            pred += Ft(Y[starts]) * (xt / symmetry_factor(t))[:, None]
        out[L] = float(np.max(np.abs(Y[ends] - Y[starts] - pred)))
    return out


# ------------------------------------------------------------ Kelly formulas


def _scalar(g: PolyMap) -> PolyMap:
    if g.dim_out != 1:
        raise ValueError("g must be scalar valued")
    return g


def kelly_function_defect(g: PolyMap, X: RoughPath, s: int, t: int) -> float:
    """|g(X)_st − Σ_C 𝒩(C)^{-1} ∫ ∂_C g(X) dX^(C)| over the simple labels of X."""
    g = _scalar(g)
    atoms = X.letters()
    H = identity_controlled(X)
    integrand: dict[Label, ControlledPath] = {}
    for lab in X.basis.labels:
        if lab.kind == "forest":
            continue
        members = lab.atoms()
        if lab.weight > X.degree or any(m not in atoms for m in members):
            continue
        idx = [atoms.index(m) for m in members]
        w = 1
        for c in Counter(idx).values():
            w *= factorial(c)
        integrand[lab] = compose_smooth(g.diff(*idx).scale(sp.Rational(1, w)), H)
    rhs = rough_integral(integrand, X, s, t)[0]
    tr = H.trace
    lhs = g(tr[t])[0] - g(tr[s])[0]
    return abs(lhs - rhs)


def _tree_tuples(trees: Sequence[Tree], max_degree: int) -> Iterable[tuple[Tree, ...]]:
    def rec(acc: tuple[Tree, ...], budget: int) -> Iterable[tuple[Tree, ...]]:
        if acc:
            yield acc
        for t in trees:
            if t.degree <= budget:
                yield from rec(acc + (t,), budget - t.degree)

    yield from rec((), max_degree)


def _kelly_integrands(
    g: PolyMap, F: VectorFields, Y: ControlledPath, X: RoughPath, trees: Sequence[Tree]
) -> dict[Label, ControlledPath]:
    sums: dict[Label, list[sp.Expr]] = defaultdict(lambda: [sp.Integer(0)])
    for tup in _tree_tuples(trees, X.degree):
        if len(tup) == 1 and tup[0].size > 1:
            continue
        lab = tup[0].label if len(tup) == 1 else bracket_label(Forest(tup))
        fields = [F.elementary(t) for t in tup]
        if any(fl is None for fl in fields):
            continue
        term = sp.Integer(0)
        for ks in product(range(F.dim), repeat=len(tup)):
            d = g.diff(*ks).exprs[0]
            if d == 0:
                continue
            for k, fl in zip(ks, fields):
                d = d * fl.exprs[k]
            term += d
        sums[lab][0] += term / factorial(len(tup))
    out = {}
    for lab, (expr,) in sums.items():
        if expr == 0:
            continue
        if Tree(lab).as_forest() not in X.basis.index:
            raise KeyError(f"driver lacks the bracket component ({lab})")
        out[lab] = compose_smooth(PolyMap([expr], g.variables), Y)
    return out


def kelly_change_of_variable_defect(
    g: PolyMap,
    Y: ControlledPath,
    F: VectorFields | Mapping[Label, PolyMap],
    X: RoughPath,
    s: int,
    t: int,
) -> float:
    """|g(Y)_st − RHS| for the change of variable formula of an RDE solution.

    The right-hand side integrates ∂_{k1…kn} g F^{k1}_{t1}⋯F^{kn}_{tn}(Y)/n!
    against the bracket components X^(t1⋯tn) of the driver X, which must
    carry every label that receives a nonzero integrand.
    """
    g = _scalar(g)
    F = VectorFields.of(F)
    atoms = set(X.letters())
    trees = [t for t in X.basis.trees if all(lab in atoms for lab in _labels(t))]
    integrand = _kelly_integrands(g, F, Y, X, trees)
    rhs = rough_integral(integrand, X, s, t)[0] if integrand else 0.0
    lhs = g(Y.trace[t])[0] - g(Y.trace[s])[0]
    return abs(lhs - rhs)


def quasi_change_of_variable_defect(
    g: PolyMap,
    Y: ControlledPath,
    F: VectorFields | Mapping[Label, PolyMap],
    X: RoughPath,
    s: int,
    t: int,
) -> float:
    """Change of variable for quasi-geometric drivers: only multiset labels contribute."""
    g = _scalar(g)
    F = VectorFields.of(F)
    atoms = set(X.letters())
    trees = [Tree(a) for a in X.letters() if a in atoms]
    integrand = _kelly_integrands(g, F, Y, X, trees)
    rhs = rough_integral(integrand, X, s, t)[0] if integrand else 0.0
    lhs = g(Y.trace[t])[0] - g(Y.trace[s])[0]
    return abs(lhs - rhs)


def _label_tuples(labels: Sequence[Label], m: int, budget: int) -> Iterable[tuple[Label, ...]]:
    for tup in product(labels, repeat=m):
        if sum(c.weight for c in tup) <= budget:
            yield tup


def quasi_integral_bracket(
    integrands: Sequence[Mapping[Label, ControlledPath]],
    X: RoughPath,
    ks: Sequence[int],
    s: int,
    t: int,
) -> float:
    """Σ over label tuples of ∫ H^{k1}_{c1}⋯H^{kn}_{cn} dX^(c1⊎…⊎cn) for scalar integrals.

    ``integrands[k]`` maps labels c to the scalar controlled integrand of the
    k-th integral Z^k = ∫ H^k_c dX^(c).
    """
    if len(ks) == 1:
        return float(rough_integral(integrands[ks[0]], X, s, t)[0])
    total: dict[Label, list[ControlledPath]] = defaultdict(list)
    for tup in _label_tuples(sorted({c for k in ks for c in integrands[k]}, key=lambda a: a.key), len(ks), X.degree):
        paths = []
        for k, c in zip(ks, tup):
            H = integrands[k].get(c)
            if H is None:
                break
            paths.append(H)
        else:
            total[multiset_label(tup)].append(multiply_controlled(paths))
    integrand = {}
    for lab, terms in total.items():
        acc = terms[0]
        for extra in terms[1:]:
            acc = _add_controlled(acc, extra)
        integrand[lab] = acc
    return float(rough_integral(integrand, X, s, t)[0]) if integrand else 0.0


def _add_controlled(a: ControlledPath, b: ControlledPath) -> ControlledPath:
    keys = set(a.coeffs) | set(b.coeffs)
    zero = np.zeros((a.X.npoints, a.dim))
    return ControlledPath(a.X, {f: a.coeffs.get(f, zero) + b.coeffs.get(f, zero) for f in keys})


def quasi_rde_bracket(
    F: VectorFields | Mapping[Label, PolyMap],
    Y: ControlledPath,
    X: RoughPath,
    ks: Sequence[int],
    s: int,
    t: int,
) -> float:
    """Bracket component Ỹ^(k1…kn) of a quasi-geometric RDE solution."""
    F = VectorFields.of(F)
    integrands = []
    for k in range(F.dim):
        integrands.append({c: compose_smooth(Fc[k], Y) for c, Fc in F.fields.items()})
    return quasi_integral_bracket(integrands, X, ks, s, t)
