"""Grid-backed branched rough paths on dyadic grids.

Values ⟨f, X_st⟩ are stored for every dyadic interval of a grid with 2^D
cells, one array of shape (2^L, nbasis) per level L.  Increments over other
grid pairs are assembled from dyadic blocks with the Grossman-Larson
product, which is how Chen's relation is applied throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import floor
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sps

from .brackets import bracket_polynomial, consistency_report, simple_labels
from .forests import (
    EMPTY,
    Forest,
    Label,
    Tree,
    atom,
    attach_at,
    bracket_label,
    enumerate_forests,
    format_forest,
    format_label,
    multiset_label,
    parse_forest,
    parse_label,
)
from .hopf import AlgElem, _forest_ck, hoffman_log, iota, phi, phi_tilde
from .polymap import PolyMap

__all__ = [
    "AlmostRoughPath",
    "ForestBasis",
    "RoughPath",
    "SewingError",
    "canonical_level2_bracket",
    "chen_defect",
    "chen_report",
    "extend_labels",
    "from_increments",
    "geometric_defect",
    "grouplike_defect",
    "grouplike_report",
    "quasi_geometric_defect",
    "quasi_geometric_lift",
    "pure_bracket_path",
    "regularity_report",
    "sew",
    "smooth_lift",
]


class SewingError(RuntimeError):
    """Successive dyadic refinements did not agree within tolerance."""

    def __init__(self, msg: str, defect: float) -> None:
        super().__init__(msg)
        self.defect = defect


_BASES: dict[tuple, ForestBasis] = {}


class ForestBasis:
    """All forests over a label set up to a degree, with a vectorised ⋆ table."""

    def __new__(cls, labels: Iterable[Label], degree: int) -> ForestBasis:
        labels = tuple(sorted(set(labels), key=lambda a: a.key))
        ck = (labels, degree)
        hit = _BASES.get(ck)
        if hit is not None:
            return hit
        self = object.__new__(cls)
        self._setup(labels, degree)
        _BASES[ck] = self
        return self

    def _setup(self, labels: tuple[Label, ...], degree: int) -> None:
        self.labels = labels
        self.degree = degree
        self.forests = [f for f in enumerate_forests(labels, degree)]
        self.index = {f: i for i, f in enumerate(self.forests)}
        self.trees = [f.trees[0] for f in self.forests if f.is_tree]
        self.size = len(self.forests)
        rows, i1, i2, coef = [], [], [], []
        for h, f in enumerate(self.forests):
            for (a, b), c in _forest_ck(f).items():
                rows.append(h)
                i1.append(self.index[a])
                i2.append(self.index[b])
                coef.append(float(c))
        self._i1 = np.array(i1, dtype=np.intp)
        self._i2 = np.array(i2, dtype=np.intp)
        self._coef = np.array(coef)
        self._gather = sps.csr_matrix(
            (np.ones(len(rows)), (np.array(rows), np.arange(len(rows)))), shape=(self.size, len(rows))
        )
        self.products = [
            (i, [self.index[t.as_forest()] for t in f.trees]) for i, f in enumerate(self.forests) if len(f.trees) >= 2
        ]

    def gl(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Truncated ⋆ of stacked coordinate vectors (…, size)."""
        a2 = np.atleast_2d(a)
        b2 = np.atleast_2d(b)
        terms = a2[:, self._i1] * b2[:, self._i2] * self._coef
        out = (self._gather @ terms.T).T
        return out.reshape(np.broadcast_shapes(a.shape, b.shape))

    def unit(self) -> np.ndarray:
        v = np.zeros(self.size)
        v[0] = 1.0
        return v

    def vector(self, x: AlgElem) -> np.ndarray:
        """Coefficient vector of an element; forests outside the basis raise."""
        v = np.zeros(self.size)
        for f, c in x.terms.items():
            try:
                v[self.index[f]] += float(c)
            except KeyError:
                raise KeyError(f"{format_forest(f)} is outside the basis") from None
        return v

    def complete_products(self, values: np.ndarray) -> None:
        """Overwrite forest coordinates by products of tree coordinates, in place."""
        for i, idx in self.products:
            values[..., i] = np.prod(values[..., idx], axis=-1)


def _dyadic_blocks(i: int, j: int, depth: int) -> list[tuple[int, int]]:
    out = []
    while i < j:
        k = 0
        while k < depth and i % (1 << (k + 1)) == 0 and i + (1 << (k + 1)) <= j:
            k += 1
        out.append((depth - k, i >> k))
        i += 1 << k
    return out


class _GridForestPath:
    def __init__(
        self,
        basis: ForestBasis,
        p: float,
        times: np.ndarray,
        levels: Sequence[np.ndarray],
        x0: Mapping[Label, float] | None = None,
    ) -> None:
        if p < 1:
            raise ValueError("p must be at least 1")
        self.basis = basis
        self.p = float(p)
        self.times = np.asarray(times, dtype=float)
        self.levels = [np.asarray(v, dtype=float) for v in levels]
        self.depth = len(self.levels) - 1
        if len(self.times) != (1 << self.depth) + 1:
            raise ValueError("grid must have 2^depth + 1 points")
        for L, v in enumerate(self.levels):
            if v.shape != (1 << L, basis.size):
                raise ValueError(f"level {L} has shape {v.shape}")
        self.x0 = {lab: float(x0.get(lab, 0.0)) for lab in basis.labels} if x0 else {}

    @property
    def labels(self) -> tuple[Label, ...]:
        return self.basis.labels

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def npoints(self) -> int:
        return len(self.times)

    def letters(self) -> list[Label]:
        return [lab for lab in self.basis.labels if lab.kind == "atom"]

    def dyadic_value(self, level: int, k: int) -> np.ndarray:
        return self.levels[level][k]

    def evaluate_all(self, x: AlgElem) -> np.ndarray:
        """⟨x, Z⟩ on every stored dyadic interval, levels concatenated."""
        v = self.basis.vector(x)
        return np.concatenate([lv @ v for lv in self.levels])

    def component(self, f: Forest | Tree | str) -> list[np.ndarray]:
        f = _as_forest(f)
        i = self.basis.index[f]
        return [lv[:, i] for lv in self.levels]

    def interval_lengths(self) -> list[np.ndarray]:
        out = []
        for L in range(self.depth + 1):
            idx = np.arange(0, self.npoints, 1 << (self.depth - L))
            out.append(np.diff(self.times[idx]))
        return out

    def starts(self, level: int) -> np.ndarray:
        """Finest-grid indices of the left endpoints of level-L intervals."""
        return np.arange(0, 1 << self.depth, 1 << (self.depth - level))


def _as_forest(f: Forest | Tree | str) -> Forest:
    if isinstance(f, str):
        return parse_forest(f)
    if isinstance(f, Tree):
        return f.as_forest()
    return f


class RoughPath(_GridForestPath):
    """A branched rough path truncated at ⌊p⌋ on a dyadic grid."""

    def increment(self, i: int, j: int) -> np.ndarray:
        """X_{t_i t_j} as a coordinate vector, composed from dyadic blocks."""
        if not 0 <= i <= j < self.npoints:
            raise IndexError(f"grid pair ({i}, {j}) out of range")
        out = self.basis.unit()
        for level, k in _dyadic_blocks(i, j, self.depth):
            out = self.basis.gl(out, self.levels[level][k])
        return out

    def value(self, f: Forest | Tree | str, i: int, j: int) -> float:
        return float(self.increment(i, j)[self.basis.index[_as_forest(f)]])

    def evaluate(self, x: AlgElem, i: int, j: int) -> float:
        return float(self.increment(i, j) @ self.basis.vector(x))

    def trace(self, label: Label | None = None) -> np.ndarray:
        """Path values x0 + X^a_{0t} on the grid; all letters when label is None."""
        labs = [label] if label is not None else list(self.basis.labels)
        cells = self.levels[self.depth]
        out = np.zeros((self.npoints, len(labs)))
        for c, lab in enumerate(labs):
            col = cells[:, self.basis.index[Tree(lab).as_forest()]]
            out[0, c] = self.x0.get(lab, 0.0)
            out[1:, c] = out[0, c] + np.cumsum(col)
        return out if label is None else out[:, 0]

    def dump(self) -> str:
        lines = ["alphabet " + " ".join(_label_token(a) for a in self.basis.labels)]
        lines.append(f"p {float(self.p)!r}")
        lines.append("grid " + " ".join(repr(float(t)) for t in self.times))
        if self.x0:
            lines.append("x0 " + " ".join(f"{_label_token(a)}={float(v)!r}" for a, v in self.x0.items()))
        for L in range(self.depth + 1):
            span = 1 << (self.depth - L)
            for k in range(1 << L):
                i, j = k * span, (k + 1) * span
                for f, v in zip(self.basis.forests, self.levels[L][k]):
                    if f.trees:
                        lines.append(f"{i} {j} {format_forest(f)} {float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> RoughPath:
        header: dict[str, str] = {}
        body = []
        for line in text.splitlines():
            if not line.strip():
                continue
            head, _, rest = line.partition(" ")
            if head in ("alphabet", "p", "grid", "x0"):
                header[head] = rest
            else:
                body.append(line)
        weights: dict[str, int] = {}
        labels = []
        for tok in header["alphabet"].split():
            name, _, w = tok.partition(":")
            if w:
                weights[name] = int(w)
        for tok in header["alphabet"].split():
            name, _, w = tok.partition(":")
            labels.append(parse_label(name, weights))
        times = np.array([float(t) for t in header["grid"].split()])
        depth = int(round(np.log2(len(times) - 1)))
        basis = ForestBasis(labels, floor(float(header["p"])))
        levels = [np.zeros((1 << L, basis.size)) for L in range(depth + 1)]
        for lv in levels:
            lv[:, 0] = 1.0
        for line in body:
            i, j, lit, v = line.split()
            i, j = int(i), int(j)
            L = depth - int(round(np.log2(j - i)))
            levels[L][i >> (depth - L), basis.index[parse_forest(lit, weights)]] = float(v)
        x0 = None
        if "x0" in header:
            x0 = {}
            for tok in header["x0"].split():
                name, _, v = tok.rpartition("=")
                x0[parse_label(name.split(":")[0], weights)] = float(v)
        return cls(basis, float(header["p"]), times, levels, x0)


class AlmostRoughPath(_GridForestPath):
    """Same layout as a rough path; multiplicativity holds only approximately."""


def _label_token(a: Label) -> str:
    if a.kind == "atom" and a.weight != 1:
        return f"{a.name}:{a.weight}"
    return format_label(a)


# ------------------------------------------------------------ defect checks


def chen_defect(X: RoughPath, s: int, u: int, t: int) -> float:
    """max |X_st − X_su ⋆ X_ut| over coordinates."""
    if not s <= u <= t:
        raise ValueError("need s <= u <= t")
    lhs = X.increment(s, t)
    rhs = X.basis.gl(X.increment(s, u), X.increment(u, t))
    return float(np.max(np.abs(lhs - rhs)))


def chen_report(X: _GridForestPath) -> np.ndarray:
    """Per-forest max of |Z_parent − Z_left ⋆ Z_right| over all dyadic triples."""
    worst = np.zeros(X.basis.size)
    for L in range(X.depth):
        child = X.levels[L + 1]
        prod = X.basis.gl(child[0::2], child[1::2])
        worst = np.maximum(worst, np.max(np.abs(X.levels[L] - prod), axis=0))
    return worst


def grouplike_defect(X: RoughPath, s: int, t: int) -> float:
    v = X.increment(s, t)
    worst = 0.0
    for i, idx in X.basis.products:
        worst = max(worst, abs(v[i] - float(np.prod(v[idx]))))
    return worst


def grouplike_report(X: _GridForestPath) -> np.ndarray:
    worst = np.zeros(X.basis.size)
    for lv in X.levels:
        for i, idx in X.basis.products:
            worst[i] = max(worst[i], float(np.max(np.abs(lv[:, i] - np.prod(lv[:, idx], axis=1)))))
    return worst


def regularity_report(X: _GridForestPath) -> dict[Forest, float]:
    """sup over dyadic intervals of |X^f_st| / (t − s)^{|f|/p} with ω(s,t) = t − s."""
    out = {}
    lengths = X.interval_lengths()
    for i, f in enumerate(X.basis.forests):
        if not f.trees:
            continue
        r = 0.0
        for lv, h in zip(X.levels, lengths):
            r = max(r, float(np.max(np.abs(lv[:, i]) / h ** (f.degree / X.p))))
        out[f] = r
    return out


# -------------------------------------------------------------- smooth lift


def _poly_coeffs(expr_map: PolyMap, k: int) -> np.ndarray:
    import sympy as sp

    (t,) = expr_map.variables
    poly = sp.Poly(expr_map.exprs[k], t)
    return np.array([float(c) for c in reversed(poly.all_coeffs())])


def _pmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[1]):
        out[:, i : i + b.shape[1]] += a[:, i : i + 1] * b
    return out


def _horner(c: np.ndarray, h: np.ndarray) -> np.ndarray:
    out = np.zeros(c.shape[0])
    for k in range(c.shape[1] - 1, -1, -1):
        out = out * h + c[:, k]
    return out


def _taylor_of_derivative(c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Coefficients in w of γ'(s + w) for each start s, shape (len(s), deg)."""
    from numpy.polynomial import polynomial as P

    der = P.polyder(c) if len(c) > 1 else np.zeros(1)
    cols = []
    fact = 1.0
    for j in range(len(der)):
        cols.append(P.polyval(s, der) / fact)
        der = P.polyder(der) if len(der) > 1 else np.zeros(1)
        fact *= j + 1
    return np.stack(cols, axis=1)


def smooth_lift(
    path: PolyMap,
    p: float,
    depth: int,
    interval: tuple[float, float] = (0.0, 1.0),
    labels: Sequence[Label] | None = None,
    extra: Mapping[Label, PolyMap] | None = None,
    alphabet: Sequence[Label] | None = None,
) -> RoughPath:
    """Geometric lift of a polynomial path by exact iterated integration.

    ``path`` maps time to ℝ^d and drives letters ``labels`` (default 1..d).
    ``extra`` supplies scalar polynomial paths for further letters, such as
    bracket labels.  ``alphabet`` lists every label of the output basis;
    letters in it without a path have zero increments.
    """
    from numpy.polynomial import polynomial as P

    if path.dim_in != 1:
        raise ValueError("a path is a polynomial map of one time variable")
    d = path.dim_out
    labels = list(labels) if labels is not None else [atom(str(i + 1)) for i in range(d)]
    comps: dict[Label, np.ndarray] = {lab: _poly_coeffs(path, k) for k, lab in enumerate(labels)}
    for lab, m in (extra or {}).items():
        comps[lab] = _poly_coeffs(m, 0)
    alpha = list(alphabet) if alphabet is not None else list(comps)
    n = floor(p)
    basis = ForestBasis(alpha, n)
    t0, t1 = interval
    times = np.linspace(t0, t1, (1 << depth) + 1)
    levels = []
    for L in range(depth + 1):
        idx = np.arange(0, (1 << depth) + 1, 1 << (depth - L))
        s = times[idx[:-1]]
        h = times[idx[1:]] - s
        dgam = {lab: _taylor_of_derivative(c, s) for lab, c in comps.items()}
        memo: dict[Tree, np.ndarray] = {}

        def tree_poly(t: Tree) -> np.ndarray:
            hit = memo.get(t)
            if hit is not None:
                return hit
            g = dgam.get(t.label)
            if g is None:
                res = np.zeros((len(s), 1))
            else:
                prod = np.ones((len(s), 1))
                for c in t.children:
                    prod = _pmul(prod, tree_poly(c))
                integrand = _pmul(prod, g)
                res = np.zeros((len(s), integrand.shape[1] + 1))
                res[:, 1:] = integrand / np.arange(1, integrand.shape[1] + 1)
            memo[t] = res
            return res

        vals = np.zeros((len(s), basis.size))
        vals[:, 0] = 1.0
        tree_vals: dict[Tree, np.ndarray] = {}
        for t in basis.trees:
            tree_vals[t] = _horner(tree_poly(t), h)
        for i, f in enumerate(basis.forests):
            if f.trees:
                v = np.ones(len(s))
                for t in f.trees:
                    v = v * tree_vals[t]
                vals[:, i] = v
        levels.append(vals)
    x0 = {lab: float(P.polyval(t0, c)) for lab, c in comps.items()}
    return RoughPath(basis, p, times, levels, x0)


# ---------------------------------------------------------------- brackets


def extend_labels(X: _GridForestPath, labels: Iterable[Label], degree: int | None = None) -> RoughPath:
    """Re-express X over a larger label set, new components being zero."""
    labels = set(labels) | set(X.basis.labels)
    basis = ForestBasis(labels, X.degree if degree is None else degree)
    levels = []
    for lv in X.levels:
        new = np.zeros((lv.shape[0], basis.size))
        for i, f in enumerate(basis.forests):
            j = X.basis.index.get(f)
            if j is not None:
                new[:, i] = lv[:, j]
        levels.append(new)
    return RoughPath(basis, X.p, X.times, levels, X.x0 or None)


def canonical_level2_bracket(X: RoughPath) -> RoughPath:
    """Adjoin X^(ab) = ⟨≪ab≫, X⟩ for a rough path with 2 ≤ p < 3."""
    if X.degree != 2:
        raise ValueError(f"canonical level-2 brackets need 2 <= p < 3, got p = {X.p}")
    atoms = X.letters()
    out = extend_labels(X, simple_labels(atoms, 2))
    for lab in out.basis.labels:
        if lab.kind != "multiset":
            continue
        pol = bracket_polynomial(Forest([Tree(a) for a in lab.members]))
        v = X.basis.vector(pol)
        i = out.basis.index[Tree(lab).as_forest()]
        for L, lv in enumerate(X.levels):
            out.levels[L][:, i] = lv @ v
    return out


def sew(Z: _GridForestPath, tol: float = 1e-8) -> RoughPath:
    """Multiplicative completion: ⋆-products of the finest almost-increments.

    The result at every dyadic interval is the ordered product of Z over the
    finest cells inside it.  The products of the next-coarser cells are
    computed as well; if the two disagree by more than ``tol`` on any common
    interval a :class:`SewingError` carrying the defect is raised.
    """
    basis = Z.basis

    def build(cells: np.ndarray) -> list[np.ndarray]:
        out = [cells]
        while out[0].shape[0] > 1:
            c = out[0]
            out.insert(0, basis.gl(c[0::2], c[1::2]))
        return out

    fine = build(Z.levels[Z.depth])
    defect = 0.0
    if Z.depth >= 1:
        coarse = build(Z.levels[Z.depth - 1])
        for a, b in zip(fine, coarse):
            defect = max(defect, float(np.max(np.abs(a - b))))
        if defect > tol:
            raise SewingError(f"sewing did not converge: refinement defect {defect:.3e} > {tol:.1e}", defect)
    X = RoughPath(basis, Z.p, Z.times, fine, Z.x0 or None)
    X.sewing_defect = defect
    return X


def from_increments(
    basis: ForestBasis, p: float, times: np.ndarray, cells: np.ndarray, x0: Mapping[Label, float] | None = None
) -> RoughPath:
    """Rough path whose coarser dyadic values are ⋆-products of the given finest increments."""
    levels = [np.asarray(cells, dtype=float)]
    while levels[0].shape[0] > 1:
        c = levels[0]
        levels.insert(0, basis.gl(c[0::2], c[1::2]))
    return RoughPath(basis, p, times, levels, x0)


def pure_bracket_path(
    depth: int, p: float = 2.5, interval: tuple[float, float] = (0.0, 1.0), name: str = "1"
) -> RoughPath:
    """One letter with constant trace and X^{a(a)}_st = −(t−s)/2, so that X^(aa)_st = t − s."""
    if not 2 <= p < 3:
        raise ValueError("the pure-bracket path is defined for 2 ≤ p < 3")
    a = atom(name)
    aa = multiset_label([a, a])
    basis = ForestBasis([a, aa], 2)
    times = np.linspace(interval[0], interval[1], (1 << depth) + 1)
    h = np.diff(times)
    cells = np.zeros((len(h), basis.size))
    cells[:, basis.index[EMPTY]] = 1.0
    cells[:, basis.index[Tree(a, [Tree(a)]).as_forest()]] = -h / 2
    cells[:, basis.index[Tree(aa).as_forest()]] = h
    return from_increments(basis, p, times, cells)


# ------------------------------------------------------------ quasi-geometry


def _word_elem_to_ladders(words: Mapping) -> AlgElem:
    return iota(words)


def geometric_defect(X: _GridForestPath) -> dict[Forest, float]:
    """Per-forest max over dyadic intervals of |X^f − X^{ι∘φ(f)}| (shuffle characters)."""
    out: dict[Forest, float] = {}
    for f in X.basis.forests:
        if not f.trees:
            continue
        vals = X.evaluate_all(AlgElem.basis(f) - iota(phi(f)))
        out[f] = float(np.max(np.abs(vals))) if vals.size else 0.0
    return out


def quasi_geometric_defect(X: _GridForestPath) -> dict[Forest, float]:
    """Per-forest max over dyadic intervals of |X^f − X^{ι∘φ̃(f)}|.

    Forests whose labels are multisets also collect the label-joining bracket
    defect of instances (f, g, ν) with f a product of single vertices over the
    simple alphabet, keyed by the forest •(f) ↷ν g.
    """
    needed = simple_labels(X.letters(), X.degree)
    if not set(needed) <= set(X.basis.labels):
        X = extend_labels(X, needed)
    out: dict[Forest, float] = {}
    for f in X.basis.forests:
        if not f.trees:
            continue
        diff = AlgElem.basis(f) - iota(phi_tilde(f))
        vals = X.evaluate_all(diff)
        out[f] = float(np.max(np.abs(vals))) if vals.size else 0.0
    labels = set(X.basis.labels)
    simple = [lab for lab in labels if lab.kind in ("atom", "multiset")]
    brackets = []
    for k in range(2, X.degree + 1):
        for combo in combinations_with_replacement(sorted(simple, key=lambda a: a.key), k):
            ff = Forest([Tree(a) for a in combo])
            if ff.degree <= X.degree and bracket_label(ff) in labels:
                brackets.append(ff)
    if brackets and isinstance(X, RoughPath):
        for f, g, nu, dfct in consistency_report(X, brackets=brackets):
            key = attach_at(Tree(bracket_label(f)).as_forest(), g, nu)
            out[key] = max(out.get(key, 0.0), dfct)
    return out


def quasi_geometric_lift(
    path: PolyMap,
    p: float,
    depth: int,
    bracket_paths: Mapping[Label, PolyMap] | None = None,
    interval: tuple[float, float] = (0.0, 1.0),
    labels: Sequence[Label] | None = None,
) -> RoughPath:
    """Quasi-geometric rough path over the simple alphabet from smooth data.

    A geometric lift Z over letters and bracket letters (with the given
    scalar paths for the bracket letters, zero otherwise) is turned into
    X̃^f = Z(log φ̃(f)) using Hoffman's logarithm, so that X̃ is a quasi-shuffle
    character whose brackets are the prescribed paths to leading order.
    """
    d = path.dim_out
    labels = list(labels) if labels is not None else [atom(str(i + 1)) for i in range(d)]
    n = floor(p)
    alpha = simple_labels(labels, n)
    Z = smooth_lift(path, p, depth, interval, labels=labels, extra=bracket_paths, alphabet=alpha)
    basis = Z.basis
    M = np.zeros((basis.size, basis.size))
    for i, f in enumerate(basis.forests):
        if not f.trees:
            M[i, 0] = 1.0
            continue
        acc: dict = {}
        for w, c in phi_tilde(f).items():
            for v, e in hoffman_log(w).items():
                acc[v] = acc.get(v, 0) + c * e
        M[i] = basis.vector(iota(acc))
    levels = [lv @ M.T for lv in Z.levels]
    return RoughPath(basis, p, Z.times, levels, Z.x0 or None)
