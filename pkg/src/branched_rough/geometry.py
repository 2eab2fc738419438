"""Connections, transfer symbols, chart changes and the manifold calculus.

Tuples of coordinate indices are plain Python tuples; multisets are sorted
tuples.  The covariant derivative ∇_γ g of a function is stored through its
coefficients on coordinate derivatives, ∇_γ g = Σ_D ∂_D g L^D_γ with D ranging
over multisets.  The transfer symbols Γ̃^C_A are defined by
∂_A g = Σ_β Γ̃^β_A ∇_β g with Γ̃ symmetric in both index sets; grouping β by
its multiset C turns this into the matrix identity M Γ̃ = 1 with
M^D_C = Σ_{β ∈ perm(C)} L^D_β.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement, permutations, product
from math import factorial
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import sympy as sp

from .controlled import (
    ControlledPath,
    VectorFields,
    compose_smooth,
    davie_solve,
    identity_controlled,
    rough_integral,
)
from .forests import Label, multiset_label
from .polymap import PolyMap
from .rough_path import RoughPath

__all__ = [
    "Chart",
    "Connection",
    "ManifoldRDESolution",
    "coordinate_matrices",
    "covariant_derivative",
    "inverse_jet",
    "ito_kelly_manifold_defect",
    "patched_integral",
    "patched_ito_defect",
    "label_of",
    "manifold_integral",
    "manifold_integrand",
    "manifold_rde_solve",
    "multisets",
    "orbit",
    "quasi_rde_coefficients",
    "rde3_coefficients",
    "right_inverse_residual",
    "s_family",
    "Atlas",
    "ManifoldRoughPath",
    "covariant_coeffs",
    "transfer_symbols",
    "transfer_symbols_poly",
    "transform_check",
]

Tup = tuple[int, ...]


def multisets(m: int, n: int) -> list[Tup]:
    """Nonempty multisets of {0..m−1} of size ≤ n, by size then lexicographically."""
    return [c for k in range(1, n + 1) for c in combinations_with_replacement(range(m), k)]


def orbit(c: Tup) -> list[Tup]:
    """Distinct orderings of a multiset."""
    return sorted(set(permutations(c)))


def n_perm(c: Tup) -> int:
    out = factorial(len(c))
    for k in Counter(c).values():
        out //= factorial(k)
    return out


def sym_factor(c: Tup) -> int:
    """𝒩 of the multiset: product of factorials of multiplicities."""
    out = 1
    for k in Counter(c).values():
        out *= factorial(k)
    return out


def _key(t: Sequence[int]) -> Tup:
    return tuple(sorted(t))


# ---------------------------------------------------------------- connection


class Connection:
    """Christoffel symbols Γ^γ_{αβ}, stored as ``gamma[γ][α][β]``, polynomial in the variables."""

    def __init__(
        self,
        christoffel: Sequence[Sequence[Sequence[Any]]],
        variables: Sequence[str | sp.Symbol] | int,
        *,
        exact: bool = True,
    ) -> None:
        probe = PolyMap([0], variables)
        self.variables = probe.variables
        m = len(self.variables)
        local = {v.name: v for v in self.variables}
        rows = []
        for g in range(m):
            for a in range(m):
                for b in range(m):
                    c = christoffel[g][a][b]
                    e = sp.sympify(c, locals=local, rational=True) if isinstance(c, str) else sp.sympify(c)
                    rows.append(sp.expand(e))
        self._flat = PolyMap(rows, self.variables, exact=exact)
        self.exact = exact
        self.dim = m
        self._nabla: dict[Tup, dict[Tup, sp.Expr]] = {}
        self._poly_cache: dict[int, dict[tuple[Tup, Tup], sp.Expr]] = {}
        self._matrix_fn: dict[int, Callable] = {}

    def gamma(self, g: int, a: int, b: int) -> sp.Expr:
        m = self.dim
        return self._flat.exprs[(g * m + a) * m + b]

    def array(self) -> list[list[list[sp.Expr]]]:
        m = self.dim
        return [[[self.gamma(g, a, b) for b in range(m)] for a in range(m)] for g in range(m)]

    @classmethod
    def flat(cls, m: int, variables: Sequence[str | sp.Symbol] | None = None) -> Connection:
        return cls([[[0] * m for _ in range(m)] for _ in range(m)], variables if variables is not None else m)

    @classmethod
    def random(
        cls,
        m: int,
        rng: np.random.Generator,
        degree: int = 1,
        torsion: bool = True,
        variables: Sequence[str | sp.Symbol] | None = None,
        scale: int = 4,
    ) -> Connection:
        """Polynomial Christoffel symbols with small random rational coefficients."""
        vs = PolyMap([0], variables if variables is not None else m).variables
        monos = [sp.Integer(1)]
        for d in range(1, degree + 1):
            monos += [sp.Mul(*c) for c in combinations_with_replacement(vs, d)]

        def draw() -> sp.Expr:
            return sum(sp.Rational(int(rng.integers(-scale, scale + 1)), scale) * mo for mo in monos)

        arr = [[[None] * m for _ in range(m)] for _ in range(m)]
        for g in range(m):
            for a in range(m):
                for b in range(a, m):
                    arr[g][a][b] = draw()
                    arr[g][b][a] = draw() if (torsion and a != b) else arr[g][a][b]
        return cls(arr, vs)

    def torsion_norm(self) -> sp.Expr:
        m = self.dim
        return sum(
            sp.Abs(sp.expand(self.gamma(g, a, b) - self.gamma(g, b, a)))
            for g in range(m)
            for a in range(m)
            for b in range(m)
        )

    def has_torsion(self) -> bool:
        m = self.dim
        return any(
            sp.expand(self.gamma(g, a, b) - self.gamma(g, b, a)) != 0
            for g in range(m)
            for a in range(m)
            for b in range(a + 1, m)
        )

    # covariant derivatives -------------------------------------------------

    def nabla(self, gam: Tup) -> dict[Tup, sp.Expr]:
        """L^D_γ: ∇_γ g = Σ_D ∂_D g L^D_γ."""
        gam = tuple(gam)
        hit = self._nabla.get(gam)
        if hit is not None:
            return hit
        if not gam:
            raise ValueError("empty index tuple")
        if len(gam) == 1:
            out = {gam: sp.Integer(1)}
        else:
            g1, rest = gam[0], gam[1:]
            x = self.variables[g1]
            acc: dict[Tup, sp.Expr] = defaultdict(lambda: sp.Integer(0))
            for D, c in self.nabla(rest).items():
                acc[_key(D + (g1,))] += c
                dc = sp.diff(c, x)
                if dc != 0:
                    acc[D] += dc
            for k in range(len(rest)):
                for a in range(self.dim):
                    chris = self.gamma(a, g1, rest[k])
                    if chris == 0:
                        continue
                    sub = rest[:k] + (a,) + rest[k + 1 :]
                    for D, c in self.nabla(sub).items():
                        acc[D] -= c * chris
            out = {D: e for D, e in ((D, sp.expand(e)) for D, e in acc.items()) if e != 0}
        self._nabla[gam] = out
        return out

    def transfer_matrix(self, n: int) -> tuple[list[Tup], list[list[sp.Expr]]]:
        """M^D_C = Σ_{β ∈ perm(C)} L^D_β over multisets of size ≤ n."""
        ms = multisets(self.dim, n)
        index = {c: i for i, c in enumerate(ms)}
        M = [[sp.Integer(0)] * len(ms) for _ in ms]
        for j, C in enumerate(ms):
            for beta in orbit(C):
                for D, c in self.nabla(beta).items():
                    M[index[D]][j] += c
        return ms, [[sp.expand(e) for e in row] for row in M]

    def transform(self, chart: Chart) -> Connection:
        """Christoffel symbols in the new chart: Γ'^k_{ij} = ∂^k_γ Γ^γ_{αβ} ∂^α_i ∂^β_j + ∂^k_γ ∂^γ_{ij}."""
        return transformed_connection(self, chart.forward, chart.inverse, chart.inverse.variables)


def transformed_connection(
    conn: Connection, forward: PolyMap, inverse: PolyMap, new_vars: Sequence[sp.Symbol], order: int | None = None
) -> Connection:
    """Connection in the coordinates x' with x = inverse(x'); forward maps x to x'.

    With ``order`` set, every component is truncated at that total degree in
    new_vars, which is exact for jets taken around the origin of x'.
    """
    m = conn.dim
    nv = tuple(new_vars)
    if tuple(forward.variables) != tuple(conn.variables):
        raise ValueError("the transition must use the connection's coordinate symbols")

    def cut(p: sp.Poly) -> sp.Poly:
        if order is None:
            return p
        return sp.Poly.from_dict({mon: c for mon, c in p.terms() if sum(mon) <= order}, *nv, domain=p.domain)

    full = [sp.Poly(e, *nv) for e in inverse.exprs]
    inner = [cut(p) for p in full]
    powers: dict[tuple[int, int], sp.Poly] = {}

    def power(i: int, k: int) -> sp.Poly:
        if k == 0:
            return sp.Poly(1, *nv)
        if (i, k) not in powers:
            powers[(i, k)] = cut(power(i, k - 1) * inner[i])
        return powers[(i, k)]

    def pull(e: sp.Expr) -> sp.Poly:
        """e(inverse(x')) truncated."""
        tot = sp.Poly(0, *nv)
        for mon, c in sp.Poly(e, *conn.variables).terms():
            term = sp.Poly(c, *nv)
            for i, k in enumerate(mon):
                if k:
                    term = cut(term * power(i, k))
            tot += term
        return tot

    jac_f = [[pull(sp.diff(forward.exprs[k], v)) for v in conn.variables] for k in range(m)]
    jac_i = [[cut(full[a].diff(v)) for v in nv] for a in range(m)]
    hess_i = [[[cut(full[g].diff(vi).diff(vj)) for vj in nv] for vi in nv] for g in range(m)]
    old = [[[pull(conn.gamma(g, a, b)) for b in range(m)] for a in range(m)] for g in range(m)]

    arr = [[[None] * m for _ in range(m)] for _ in range(m)]
    for k in range(m):
        for i in range(m):
            for j in range(m):
                tot = sp.Poly(0, *nv)
                for g in range(m):
                    if jac_f[k][g].is_zero:
                        continue
                    acc = hess_i[g][i][j]
                    for a in range(m):
                        if jac_i[a][i].is_zero:
                            continue
                        for b in range(m):
                            if not old[g][a][b].is_zero and not jac_i[b][j].is_zero:
                                acc += cut(cut(old[g][a][b] * jac_i[a][i]) * jac_i[b][j])
                    tot += cut(jac_f[k][g] * acc)
                arr[k][i][j] = tot.as_expr()
    return Connection(arr, list(new_vars), exact=conn.exact)


def covariant_derivative(conn: Connection, g: PolyMap, gam: Tup) -> PolyMap:
    """∇_γ g for a scalar polynomial g."""
    tot = sp.Integer(0)
    for D, c in conn.nabla(tuple(gam)).items():
        tot += g.diff(*D).exprs[0] * c
    return PolyMap([sp.expand(tot)], g.variables, exact=g.exact and conn.exact)


def covariant_coeffs(conn: Connection, point: Sequence[float], n: int) -> dict[tuple[Tup, Tup], float]:
    """Numeric L at a point: (multiset D, tuple γ) ↦ L^D_γ for tuples of length ≤ n."""
    sub = dict(zip(conn.variables, [float(v) for v in point]))
    out = {}
    for k in range(1, n + 1):
        for gam in product(range(conn.dim), repeat=k):
            for D, c in conn.nabla(gam).items():
                v = float(c.xreplace(sub))
                if v != 0.0:
                    out[(D, gam)] = v
    return out


# ------------------------------------------------------------ transfer symbols


def transfer_symbols(conn: Connection, points: Any, n: int) -> tuple[list[Tup], np.ndarray]:
    """Numeric route: Γ̃ = M^{-1} solved pointwise.  Returns (multisets, array (N, K, K)).

    Entry [p, i, j] is Γ̃^{C_i}_{A_j}, the value carried by every tuple in the
    orbit of C_i against every tuple in the orbit of A_j.
    """
    ms, M = conn.transfer_matrix(n)
    fn = conn._matrix_fn.get(n)
    if fn is None:
        fn = sp.lambdify(conn.variables, M, modules="numpy")
        conn._matrix_fn[n] = fn
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    K = len(ms)
    out = np.empty((pts.shape[0], K, K))
    eye = np.eye(K)
    for p, x in enumerate(pts):
        Mx = np.array(
            [[np.asarray(v, dtype=float) for v in row] for row in fn(*x)], dtype=float
        ).reshape(K, K)
        out[p] = np.linalg.solve(Mx, eye)
    return ms, out


def transfer_symbols_poly(conn: Connection, n: int) -> dict[tuple[Tup, Tup], sp.Expr]:
    """Symbolic route: exact back-substitution through the block-triangular M.

    Diagonal blocks are the constants #perm(C), so every Γ̃ is a polynomial in
    the Christoffel symbols and their derivatives.  Keys are (C, A) multisets;
    missing keys are zero.
    """
    hit = conn._poly_cache.get(n)
    if hit is not None:
        return hit
    ms, M = conn.transfer_matrix(n)
    index = {c: i for i, c in enumerate(ms)}
    out: dict[tuple[Tup, Tup], sp.Expr] = {}
    for A in ms:
        for D in sorted((d for d in ms if len(d) <= len(A)), key=len, reverse=True):
            acc = sp.Integer(1) if D == A else sp.Integer(0)
            i = index[D]
            for C in ms:
                if len(D) < len(C) <= len(A):
                    v = out.get((C, A))
                    if v is not None and M[i][index[C]] != 0:
                        acc -= M[i][index[C]] * v
            val = sp.expand(acc / n_perm(D))
            if val != 0:
                out[(D, A)] = val
    conn._poly_cache[n] = out
    return out


def transfer_tensor(table: Mapping[tuple[Tup, Tup], Any], upper: Tup, lower: Tup) -> Any:
    return table.get((_key(upper), _key(lower)), 0)


def right_inverse_residual(
    conn: Connection, point: Sequence[float], n: int, S: Mapping[tuple[Tup, Tup], Any] | None = None
) -> float:
    """max |sym_{γ,β} Σ_α L^γ_α S^α_β − sym δ^γ_β| over tuples of length ≤ n.

    S maps (upper tuple, lower tuple) to a value; by default the transfer
    symbols.  L^γ_α spreads L^D_α evenly over the orbit of D.
    """
    m = conn.dim
    sub = dict(zip(conn.variables, [sp.nsimplify(v) for v in point]))
    if S is None:
        table = transfer_symbols_poly(conn, n)

        def s_val(up: Tup, lo: Tup) -> float:
            return float(sp.sympify(transfer_tensor(table, up, lo)).xreplace(sub))

    else:

        def s_val(up: Tup, lo: Tup) -> float:
            return float(sp.sympify(S.get((up, lo), 0)).xreplace(sub))

    tuples = [t for k in range(1, n + 1) for t in product(range(m), repeat=k)]
    Lval = {a: {D: float(c.xreplace(sub)) for D, c in conn.nabla(a).items()} for a in tuples}
    worst = 0.0
    ms = multisets(m, n)
    for Dset in ms:
        for Bset in ms:
            # symmetrised over γ ∈ orbit(D) and β ∈ orbit(B): evaluate at representatives.
            tot = 0.0
            for a in tuples:
                lv = Lval[a].get(Dset, 0.0)
                if lv == 0.0:
                    continue
                sv = np.mean([s_val(a, b) for b in orbit(Bset)])
                tot += lv / n_perm(Dset) * sv
            target = (1.0 / n_perm(Dset)) if Dset == Bset else 0.0
            worst = max(worst, abs(tot - target))
    return worst


def s_family(conn: Connection, c: Any) -> dict[tuple[Tup, Tup], sp.Expr]:
    """The order-≤3 solutions S(c) of the right-inverse condition, tuple-indexed.

    Lower indices are symmetrised; S(3/2) equals the transfer symbols.
    """
    c = sp.nsimplify(c)
    m = conn.dim
    G = conn.gamma
    xs = conn.variables
    raw: dict[tuple[Tup, Tup], sp.Expr] = {}
    for lam in range(m):
        raw[((lam,), (lam,))] = sp.Integer(1)
        for a, b in product(range(m), repeat=2):
            raw[((lam,), (a, b))] = G(lam, a, b)
            for g in range(m):
                e = sp.diff(G(lam, b, g), xs[a])
                for s in range(m):
                    symm = (G(lam, g, s) + G(lam, s, g)) / 2
                    anti = (G(lam, g, s) - G(lam, s, g)) / 2
                    e += (symm + (3 - 2 * c) * anti) * G(s, a, b)
                raw[((lam,), (a, b, g))] = e
    for mu, nu in product(range(m), repeat=2):
        raw[((mu, nu), (mu, nu))] = sp.Integer(1)
        for a, b, g in product(range(m), repeat=3):
            e = sp.Integer(0)
            if nu == g:
                e += c * G(mu, a, b)
            if mu == g:
                e += (3 - c) * G(nu, a, b)
            raw[((mu, nu), (a, b, g))] = e
    for t in product(range(m), repeat=3):
        raw[(t, t)] = sp.Integer(1)
    out: dict[tuple[Tup, Tup], sp.Expr] = {}
    lowers = {lo for _, lo in raw}
    uppers = {up for up, _ in raw}
    for up in uppers:
        for lo in set(lowers) | {p for lo in lowers for p in permutations(lo)}:
            perms = list(permutations(lo))
            val = sp.expand(sum(raw.get((up, p), 0) for p in perms) / len(perms))
            if val != 0:
                out[(up, lo)] = val
    return out


# ------------------------------------------------------------ chart changes


@dataclass(frozen=True)
class Chart:
    """A chart transition x' = forward(x) with polynomial inverse x = inverse(x')."""

    forward: PolyMap
    inverse: PolyMap

    def __post_init__(self) -> None:
        comp = self.forward.compose(self.inverse)
        ident = PolyMap.identity(self.inverse.dim_in, self.inverse.variables)
        if comp != ident:
            raise ValueError("inverse does not invert forward")

    @classmethod
    def shear(cls, m: int, poly: str, target: int = 1, source: int = 0) -> Chart:
        """x'_target = x_target + p(x_source), other coordinates unchanged."""
        xs = sp.symbols(f"x1:{m + 1}", real=True)
        ys = sp.symbols(f"y1:{m + 1}", real=True)
        p = sp.sympify(poly, locals={"t": xs[source]}, rational=True)
        fwd = [xs[k] + (p if k == target else 0) for k in range(m)]
        q = p.xreplace({xs[source]: ys[source]})
        inv = [ys[k] - (q if k == target else 0) for k in range(m)]
        return cls(PolyMap(fwd, xs), PolyMap(inv, ys))

    def then(self, other: Chart) -> Chart:
        """The transition other ∘ self."""
        fwd = PolyMap(
            [e.xreplace(dict(zip(other.forward.variables, self.forward.exprs))) for e in other.forward.exprs],
            self.forward.variables,
        )
        inv = PolyMap(
            [e.xreplace(dict(zip(self.inverse.variables, other.inverse.exprs))) for e in self.inverse.exprs],
            other.inverse.variables,
        )
        return Chart(fwd, inv)

    def pull_form(self, form: PolyMap) -> PolyMap:
        """One-form in the new chart: f'_i(x') = f_α(x(x')) ∂_i x^α."""
        inv = self.inverse
        m = inv.dim_out
        sub = dict(zip(form.variables, inv.exprs))
        comps = []
        for i in range(m):
            tot = sp.Integer(0)
            for a in range(m):
                tot += form.exprs[a].xreplace(sub) * sp.diff(inv.exprs[a], inv.variables[i])
            comps.append(tot)
        return PolyMap(comps, inv.variables)

    def push_function(self, g: PolyMap) -> PolyMap:
        """g expressed in the new chart."""
        return g.compose(self.inverse)


def _cut(p: sp.Poly, order: int) -> sp.Poly:
    return sp.Poly.from_dict(
        {mon: c for mon, c in p.terms() if sum(mon) <= order} or {(0,) * len(p.gens): 0}, *p.gens, domain=p.domain
    )


def inverse_jet(forward: PolyMap, x0: Sequence[Any], order: int) -> PolyMap:
    """Taylor polynomial of u ↦ forward^{-1}(forward(x0) + u) − x0 to the given order.

    Fixed-point series reversion with exact rationals; needs an invertible
    Jacobian at x0.
    """
    m = forward.dim_in
    x0 = [sp.nsimplify(v) for v in x0]
    us = sp.symbols(f"u1:{m + 1}", real=True)
    xs = forward.variables
    shift = dict(zip(xs, [x0[i] + xs[i] for i in range(m)]))
    base = forward.at(x0)
    centred = [sp.Poly(sp.expand(e.xreplace(shift)) - base[k], *xs) for k, e in enumerate(forward.exprs)]
    J = sp.Matrix([[p.coeff_monomial(xs[i]) for i in range(m)] for p in centred])
    if J.det() == 0:
        raise ValueError("Jacobian is singular at the base point")
    Jinv = J.inv()
    nonlinear = [[(mon, c) for mon, c in p.terms() if sum(mon) >= 2] for p in centred]
    u_polys = [sp.Poly(u, *us) for u in us]
    v = [sp.Poly(0, *us) for _ in range(m)]
    for _ in range(order):
        powers: dict[tuple[int, int], sp.Poly] = {}

        def power(i: int, k: int) -> sp.Poly:
            if k == 0:
                return sp.Poly(1, *us)
            if (i, k) not in powers:
                powers[(i, k)] = _cut(power(i, k - 1) * v[i], order)
            return powers[(i, k)]

        nl = []
        for terms in nonlinear:
            tot = sp.Poly(0, *us)
            for mon, c in terms:
                term = sp.Poly(c, *us)
                for i, k in enumerate(mon):
                    if k:
                        term = _cut(term * power(i, k), order)
                tot += term
            nl.append(tot)
        rhs = [u_polys[k] - nl[k] for k in range(m)]
        v = [_cut(sum((rhs[j] * Jinv[i, j] for j in range(m)), sp.Poly(0, *us)), order) for i in range(m)]
    return PolyMap([p.as_expr() for p in v], us)


def _forward_at(forward: PolyMap, x0: Sequence[Any], order: int) -> list[np.ndarray]:
    """Derivative tensors of forward at x0, shapes (m, m^r) for r = 1..order."""
    pt = np.asarray([float(sp.nsimplify(v)) for v in x0])
    m = forward.dim_in
    return [forward.derivative_tensor(pt, r).reshape(forward.dim_out, m**r) for r in range(1, order + 1)]


def _jet_tensors(jet: PolyMap, order: int) -> list[np.ndarray]:
    m = jet.dim_in
    zero = np.zeros(m)
    return [jet.derivative_tensor(zero, r).reshape(jet.dim_out, m**r) for r in range(1, order + 1)]


def _compositions(n: int, k: int) -> list[tuple[int, ...]]:
    if k == 1:
        return [(n,)] if n >= 1 else []
    return [(a,) + rest for a in range(1, n - k + 2) for rest in _compositions(n - a, k - 1)]


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = mats[0]
    for M in mats[1:]:
        out = np.kron(out, M)
    return out


def _symmetrize_cols(T: np.ndarray, m: int, r: int) -> np.ndarray:
    """Average over permutations of the r column indices of a (rows, m^r) array."""
    rows = T.shape[0]
    A = T.reshape((rows,) + (m,) * r)
    acc = np.zeros_like(A)
    perms = list(permutations(range(r)))
    for p in perms:
        acc += np.transpose(A, (0,) + tuple(1 + i for i in p))
    return (acc / len(perms)).reshape(rows, m**r)


def _symmetrize_rows(T: np.ndarray, m: int, r: int) -> np.ndarray:
    return _symmetrize_cols(T.T, m, r).T


def _s_blocks(value: Callable[[Tup, Tup], float], m: int, n: int) -> dict[tuple[int, int], np.ndarray]:
    out = {}
    for a in range(1, n + 1):
        ups = list(product(range(m), repeat=a))
        for b in range(1, n + 1):
            los = list(product(range(m), repeat=b))
            out[(a, b)] = np.array([[value(u, l) for l in los] for u in ups], dtype=float)
    return out


def _table_value(table: Mapping[tuple[Tup, Tup], Any], subs: Mapping) -> Callable[[Tup, Tup], float]:
    cache: dict[tuple[Tup, Tup], float] = {}

    def val(u: Tup, l: Tup) -> float:
        k = (_key(u), _key(l))
        if k not in cache:
            cache[k] = float(sp.sympify(table.get(k, 0)).xreplace(subs))
        return cache[k]

    return val


def _tuple_value(table: Mapping[tuple[Tup, Tup], Any], subs: Mapping) -> Callable[[Tup, Tup], float]:
    cache: dict[tuple[Tup, Tup], float] = {}

    def val(u: Tup, l: Tup) -> float:
        k = (u, l)
        if k not in cache:
            cache[k] = float(sp.sympify(table.get(k, 0)).xreplace(subs))
        return cache[k]

    return val


def transform_check(
    conn: Connection,
    forward: PolyMap,
    x0: Sequence[Any],
    n: int,
    c: Any | None = None,
) -> float:
    """Residual of the tensorial transformation law for the symbols S at x0.

    The new chart is x' = forward(x); its Christoffel symbols are built from an
    exact inverse jet around forward(x0).  With c None, S is the transfer
    symbols; otherwise the order-≤3 member S(c) of the right-inverse family.
    Compares S'^i_j with sym_j Σ |j|!/(|β|! Π|j^l|!) ∂^i_α S^α_β Π ∂^{β_l}_{j^l}.
    """
    m = conn.dim
    if c is not None and n > 3:
        raise ValueError("the S(c) family is written out to order 3")
    x0 = [sp.nsimplify(v) for v in x0]
    jet = inverse_jet(forward, x0, n + 1)
    us = jet.variables
    # Coordinates centred on x0 and forward(x0): the inverse jet is exact to the needed order.
    xs = conn.variables
    shift = dict(zip(xs, [x0[i] + xs[i] for i in range(m)]))
    centred_old = Connection(
        [[[conn.gamma(g, a, b).xreplace(shift) for b in range(m)] for a in range(m)] for g in range(m)], xs
    )
    base = forward.at(x0)
    fwd_c = PolyMap([sp.expand(e.xreplace(shift) - base[k]) for k, e in enumerate(forward.exprs)], xs)
    new_conn = transformed_connection(centred_old, fwd_c, jet, us, order=max(n - 2, 0))
    zero_old = {v: 0 for v in xs}
    zero_new = {v: 0 for v in us}
    if c is None:
        old_val = _table_value(transfer_symbols_poly(centred_old, n), zero_old)
        new_val = _table_value(transfer_symbols_poly(new_conn, n), zero_new)
    else:
        old_val = _tuple_value(s_family(centred_old, c), zero_old)
        new_val = _tuple_value(s_family(new_conn, c), zero_new)
    S_old = _s_blocks(old_val, m, n)
    S_new = _s_blocks(new_val, m, n)
    J = _forward_at(fwd_c, [0] * m, 1)[0]
    D = _jet_tensors(jet, n)
    worst = 0.0
    for a in range(1, n + 1):
        Ja = _kron_all([J] * a)
        for r in range(1, n + 1):
            rhs = np.zeros((m**a, m**r))
            for b in range(1, r + 1):
                for comp in _compositions(r, b):
                    coef = factorial(r) / (factorial(b) * np.prod([factorial(q) for q in comp]))
                    rhs += coef * Ja @ S_old[(a, b)] @ _kron_all([D[q - 1] for q in comp])
            rhs = _symmetrize_cols(rhs, m, r)
            lhs = _symmetrize_cols(S_new[(a, r)], m, r)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def _surjections(N: int, M: int) -> list[tuple[int, ...]]:
    return [f for f in product(range(M), repeat=N) if len(set(f)) == M]


def _unshuffle_matrix(derivs: Callable[[int, Tup], float], m: int, M: int, N: int) -> np.ndarray:
    """(1/M!) Σ over ordered partitions of the N positions into M blocks of Π ∂_{block l} φ^{i_l}."""
    ups = list(product(range(m), repeat=M))
    los = list(product(range(m), repeat=N))
    maps = _surjections(N, M)
    out = np.zeros((len(ups), len(los)))
    for r, i in enumerate(ups):
        for s, alpha in enumerate(los):
            tot = 0.0
            for f in maps:
                term = 1.0
                for l in range(M):
                    block = tuple(alpha[p] for p in range(N) if f[p] == l)
                    term *= derivs(i[l], block)
                    if term == 0.0:
                        break
                tot += term
            out[r, s] = tot / factorial(M)
    return out


def coordinate_matrices(
    forward: PolyMap, x0: Sequence[Any], n: int
) -> tuple[dict[tuple[int, int], np.ndarray], dict[tuple[int, int], np.ndarray]]:
    """Blocks A[(|i|, |α|)] with forward derivatives and B[(|β|, |j|)] with inverse ones.

    Returns (A, B); B·A restricted to equal lengths is the symmetriser and
    vanishes when the lower length exceeds the upper one.
    """
    m = forward.dim_in
    x0 = [sp.nsimplify(v) for v in x0]
    jet = inverse_jet(forward, x0, n)
    fsub = dict(zip(forward.variables, x0))
    zero = {v: 0 for v in jet.variables}

    @lru_cache(maxsize=None)
    def fwd(k: int, block: Tup) -> float:
        return float(sp.diff(forward.exprs[k], *[forward.variables[b] for b in block]).xreplace(fsub))

    @lru_cache(maxsize=None)
    def inv(k: int, block: Tup) -> float:
        return float(sp.diff(jet.exprs[k], *[jet.variables[b] for b in block]).xreplace(zero))

    A = {(M, N): _unshuffle_matrix(fwd, m, M, N) for M in range(1, n + 1) for N in range(M, n + 1)}
    B = {(M, N): _unshuffle_matrix(inv, m, M, N) for M in range(1, n + 1) for N in range(M, n + 1)}
    return A, B


# -------------------------------------------------------- manifold integrals


def label_of(c: Tup, letters: Sequence[Label]) -> Label:
    if len(c) == 1:
        return letters[c[0]]
    return multiset_label(letters[i] for i in c)


def manifold_integrand(form: PolyMap, conn: Connection, n: int) -> dict[Tup, PolyMap]:
    """h_B = f_λ Γ̃^λ_B / 𝒩(B) for multisets B of size ≤ n."""
    m = conn.dim
    table = transfer_symbols_poly(conn, n)
    out = {}
    for B in multisets(m, n):
        tot = sp.Integer(0)
        for lam in range(m):
            v = table.get(((lam,), B))
            if v is not None:
                tot += form.exprs[lam] * v
        tot = sp.expand(tot / sym_factor(B))
        if tot != 0:
            out[B] = PolyMap([tot], form.variables, exact=form.exact)
    return out


def _integrate_label_form(integrand: Mapping[Tup, PolyMap], X: RoughPath, s: int, t: int) -> float:
    letters = X.letters()
    Id = identity_controlled(X)
    paths = {label_of(B, letters): compose_smooth(h, Id) for B, h in integrand.items()}
    if not paths:
        return 0.0
    return float(rough_integral(paths, X, s, t)[0])


def manifold_integral(form: PolyMap, conn: Connection, X: RoughPath, s: int, t: int) -> float:
    """∫_s^t f(X) d_∇X = Σ_B ∫ f_λ Γ̃^λ_B(X)/𝒩(B) dX^(B) in a single chart."""
    if form.dim_in != conn.dim or form.dim_out != conn.dim:
        raise ValueError("the one-form needs as many components as coordinates")
    return _integrate_label_form(manifold_integrand(form, conn, X.degree), X, s, t)


def ito_kelly_manifold_defect(g: PolyMap, conn: Connection, X: RoughPath, s: int, t: int) -> float:
    """|g(X)_st − Σ_B 𝒩(B)^{-1} ∫ Σ_γ ∇_γ g Γ̃^γ_B dX^(B)| with covariant derivatives of g."""
    m = conn.dim
    n = X.degree
    table = transfer_symbols_poly(conn, n)
    nab = {}
    for C in multisets(m, n):
        nab[C] = sum((covariant_derivative(conn, g, gam).exprs[0] for gam in orbit(C)), sp.Integer(0))
    integrand = {}
    for B in multisets(m, n):
        tot = sp.Integer(0)
        for C in multisets(m, n):
            v = table.get((C, B))
            if v is not None:
                tot += nab[C] * v
        tot = sp.expand(tot / sym_factor(B))
        if tot != 0:
            integrand[B] = PolyMap([tot], g.variables)
    rhs = _integrate_label_form(integrand, X, s, t)
    letters = X.letters()
    tr = X.trace()[:, [X.basis.labels.index(a) for a in letters]]
    lhs = float(g(tr[t])[0] - g(tr[s])[0])
    return abs(lhs - rhs)


@dataclass(frozen=True)
class Atlas:
    """Charts given by transitions from a reference chart, each valid on a coordinate box.

    ``boxes[name]`` bounds the reference coordinates where the chart may be
    used; the reference chart itself is named ``reference``.
    """

    charts: Mapping[str, Chart]
    boxes: Mapping[str, tuple[tuple[float, float], ...]]
    reference: str = "reference"

    def names(self) -> list[str]:
        return [self.reference] + [c for c in self.charts if c != self.reference]

    def contains(self, name: str, x: np.ndarray, margin: float = 0.0) -> bool:
        box = self.boxes.get(name)
        if box is None:
            return True
        return all(lo + margin <= v <= hi - margin for v, (lo, hi) in zip(x, box))

    def connection(self, conn: Connection, name: str) -> Connection:
        return conn if name == self.reference else conn.transform(self.charts[name])

    def form(self, form: PolyMap, name: str) -> PolyMap:
        return form if name == self.reference else self.charts[name].pull_form(form)

    def function(self, g: PolyMap, name: str) -> PolyMap:
        return g if name == self.reference else self.charts[name].push_function(g)

    def partition(
        self, trace: np.ndarray, s: int, t: int, order: Sequence[str] | None = None, margin: float = 0.0
    ) -> list[tuple[str, int, int]]:
        """Greedy patching: stay in the current chart until the trace nears its boundary."""
        order = list(order) if order is not None else self.names()
        cells: list[tuple[str, int, int]] = []
        k = s
        while k < t:
            name = next(
                (c for c in order if self.contains(c, trace[k], margin) and self.contains(c, trace[k + 1], margin)),
                None,
            )
            if name is None:
                raise ValueError(f"grid step {k} is not covered by any chart")
            j = k + 1
            while j < t and self.contains(name, trace[j + 1], margin):
                j += 1
            cells.append((name, k, j))
            k = j
        return cells


@dataclass
class ManifoldRoughPath:
    """Simple-bracket drivers in every chart of an atlas, related by bracket pushforward."""

    atlas: Atlas
    paths: dict[str, RoughPath]

    @classmethod
    def from_reference(cls, atlas: Atlas, X: RoughPath, tol: float = 1.0) -> ManifoldRoughPath:
        from .lift import pushforward_bracket

        paths = {atlas.reference: X}
        for name, chart in atlas.charts.items():
            if name != atlas.reference:
                paths[name] = pushforward_bracket(chart.forward, X, names=[a.name for a in X.letters()], tol=tol)
        return cls(atlas, paths)

    @property
    def reference(self) -> RoughPath:
        return self.paths[self.atlas.reference]

    def reference_trace(self) -> np.ndarray:
        X = self.reference
        return X.trace()[:, [X.basis.labels.index(a) for a in X.letters()]]

    def compatibility_defect(self, tol: float = 1.0) -> float:
        """max over charts and components of |(transition)_* X_ref − X_chart| on the finest cells."""
        from .lift import pushforward_bracket

        worst = 0.0
        X = self.reference
        for name, chart in self.atlas.charts.items():
            if name == self.atlas.reference:
                continue
            Y = pushforward_bracket(chart.forward, X, names=[a.name for a in X.letters()], tol=tol)
            Z = self.paths[name]
            for f in Z.basis.forests:
                i, j = Z.basis.index[f], Y.basis.index.get(f)
                if j is None:
                    continue
                worst = max(worst, float(np.max(np.abs(Z.levels[Z.depth][:, i] - Y.levels[Y.depth][:, j]))))
        return worst


def patched_integral(
    form: PolyMap,
    conn: Connection,
    MX: ManifoldRoughPath,
    s: int,
    t: int,
    cells: Sequence[tuple[str, int, int]] | None = None,
) -> float:
    """Σ over patching cells of the single-chart manifold integral; greedy cells by default."""
    atlas = MX.atlas
    if cells is None:
        cells = atlas.partition(MX.reference_trace(), s, t)
    total = 0.0
    cache: dict[str, tuple[PolyMap, Connection]] = {}
    for name, a, b in cells:
        if name not in cache:
            cache[name] = (atlas.form(form, name), atlas.connection(conn, name))
        f, c = cache[name]
        total += manifold_integral(f, c, MX.paths[name], a, b)
    return total


def patched_ito_defect(
    g: PolyMap,
    conn: Connection,
    MX: ManifoldRoughPath,
    s: int,
    t: int,
    cells: Sequence[tuple[str, int, int]] | None = None,
) -> float:
    """Itô-Kelly defect on a manifold, summed over the patching cells."""
    atlas = MX.atlas
    if cells is None:
        cells = atlas.partition(MX.reference_trace(), s, t)
    return sum(
        ito_kelly_manifold_defect(atlas.function(g, name), atlas.connection(conn, name), MX.paths[name], a, b)
        for name, a, b in cells
    )


# ----------------------------------------------------------- manifold RDEs


def quasi_rde_coefficients(
    F: Sequence[Sequence[sp.Expr]],
    conn_N: Connection,
    conn_M: Connection,
    n: int,
    variables: Sequence[sp.Symbol] | None = None,
) -> dict[Tup, list[sp.Expr]]:
    """Label-form coefficients G^k_C with dY^k = Σ_C G^k_C(Y, X) dX^(C).

    F[k][α] is the field of linear maps, symbolic in the coordinates of both
    manifolds.  Starting from the single-letter terms, each round recomputes
    the brackets dY^(I) = Σ_{c1…cm} Π G^{i_l}_{c_l} dX^(c1⊎…⊎cm) and then
    G^k_C = F^k_α Γ̃_M^α_C/𝒩(C) − Σ_{2≤|I|≤n} Γ̃_N^k_I(Y)/𝒩(I) [dY^(I)]_C.
    """
    e = conn_N.dim
    m = conn_M.dim
    tN = transfer_symbols_poly(conn_N, n)
    tM = transfer_symbols_poly(conn_M, n)
    labels = multisets(m, n)
    base: dict[Tup, list[sp.Expr]] = {}
    for C in labels:
        row = []
        for k in range(e):
            tot = sp.Integer(0)
            for a in range(m):
                v = tM.get(((a,), C))
                if v is not None:
                    tot += F[k][a] * v
            row.append(sp.expand(tot / sym_factor(C)))
        base[C] = row
    G = {C: (base[C] if len(C) == 1 else [sp.Integer(0)] * e) for C in labels}
    for order in range(2, n + 1):
        brackets = _rde_brackets(G, e, order)
        new = {}
        for C in labels:
            if len(C) > order:
                new[C] = G[C]
                continue
            row = []
            for k in range(e):
                tot = base[C][k]
                for I, per in brackets.items():
                    v = tN.get(((k,), I))
                    if v is None:
                        continue
                    w = per.get(C)
                    if w is not None:
                        tot -= v * w / sym_factor(I)
                row.append(sp.expand(tot))
            new[C] = row
        G = new
    return G


def _rde_brackets(G: Mapping[Tup, Sequence[sp.Expr]], e: int, n: int) -> dict[Tup, dict[Tup, sp.Expr]]:
    out: dict[Tup, dict[Tup, sp.Expr]] = {}
    labels = [C for C in G if any(v != 0 for v in G[C])]
    for size in range(2, n + 1):
        for I in combinations_with_replacement(range(e), size):
            acc: dict[Tup, sp.Expr] = defaultdict(lambda: sp.Integer(0))

            def rec(pos: int, chosen: Tup, term: sp.Expr, budget: int) -> None:
                if pos == len(I):
                    acc[_key(chosen)] += term
                    return
                for C in labels:
                    if len(C) <= budget - (len(I) - pos - 1):
                        v = G[C][I[pos]]
                        if v != 0:
                            rec(pos + 1, chosen + C, term * v, budget - len(C))

            rec(0, (), sp.Integer(1), n)
            per = {C: sp.expand(v) for C, v in acc.items()}
            out[I] = {C: v for C, v in per.items() if v != 0}
    return out


def rde3_coefficients(
    F: Sequence[Sequence[sp.Expr]], conn_N: Connection, m: int
) -> dict[Tup, list[sp.Expr]]:
    """The closed-form order-3 coefficients for a flat driver manifold, in label form.

    Tuple coefficients F^k_α, −½Γ^k_{ij}F^i_αF^j_β and
    (⅓Γ^k_{(hl)}Γ^l_{ij} − ⅙∂_iΓ^k_{jh})F^i_αF^j_βF^h_γ are summed over the
    orderings of each multiset.
    """
    e = conn_N.dim
    G = conn_N.gamma
    ys = conn_N.variables
    out: dict[Tup, list[sp.Expr]] = {}
    for C in multisets(m, 3):
        row = []
        for k in range(e):
            tot = sp.Integer(0)
            for tup in orbit(C):
                if len(tup) == 1:
                    tot += F[k][tup[0]]
                elif len(tup) == 2:
                    a, b = tup
                    for i, j in product(range(e), repeat=2):
                        tot += -sp.Rational(1, 2) * G(k, i, j) * F[i][a] * F[j][b]
                else:
                    a, b, g = tup
                    for i, j, h in product(range(e), repeat=3):
                        coef = -sp.Rational(1, 6) * sp.diff(G(k, j, h), ys[i])
                        for l in range(e):
                            coef += sp.Rational(1, 3) * (G(k, h, l) + G(k, l, h)) / 2 * G(l, i, j)
                        tot += coef * F[i][a] * F[j][b] * F[h][g]
            row.append(sp.expand(tot))
        out[C] = row
    return out


@dataclass
class ManifoldRDESolution:
    """Solution of a manifold RDE in one chart of each manifold."""

    Y: np.ndarray
    state: ControlledPath
    coefficients: dict[Tup, list[sp.Expr]]
    fields: VectorFields = field(repr=False)
    connection_N: Connection | None = field(default=None, repr=False)

    def bracket_integrands(self, I: Tup) -> dict[Tup, PolyMap]:
        """Label-form integrands of the solution's simple bracket Y^(I)."""
        e = len(self.Y[0])
        per = _rde_brackets(self.coefficients, e, self.state.X.degree).get(_key(I), {})
        vs = self.fields.variables()
        return {C: PolyMap([v], vs) for C, v in per.items()}

    def bracket(self, I: Tup, s: int, t: int) -> float:
        """Y^(I)_st = Σ_C ∫ [dY^(I)]_C(Y, X) dX^(C)."""
        X = self.state.X
        letters = X.letters()
        paths = {
            label_of(C, letters): compose_smooth(h, self.state) for C, h in self.bracket_integrands(I).items()
        }
        if not paths:
            return 0.0
        return float(rough_integral(paths, X, s, t)[0])


def manifold_rde_solve(
    F: Sequence[Sequence[Any]],
    conn_N: Connection,
    conn_M: Connection,
    X: RoughPath,
    y0: Sequence[float],
) -> ManifoldRDESolution:
    """Davie scheme for dY = G_C(Y, X) dX^(C) on the augmented state (Y, X).

    F[k][α] is polynomial in the coordinates of N (conn_N.variables) and of M
    (conn_M.variables); the driver X is a simple bracket extension whose
    letters are the coordinates of M.
    """
    e, m = conn_N.dim, conn_M.dim
    letters = X.letters()
    if len(letters) != m:
        raise ValueError(f"driver has {len(letters)} letters, chart of M has dimension {m}")
    vs = tuple(conn_N.variables) + tuple(conn_M.variables)
    Fexpr = [[sp.sympify(F[k][a]) for a in range(m)] for k in range(e)]
    G = quasi_rde_coefficients(Fexpr, conn_N, conn_M, X.degree)
    fields: dict[Label, PolyMap] = {}
    available = set(X.basis.labels)
    for C, row in G.items():
        lab = label_of(C, letters)
        drift = [0] * m
        if len(C) == 1:
            drift[C[0]] = 1
        if all(v == 0 for v in row) and not any(drift):
            continue
        if lab not in available:
            raise KeyError(f"driver lacks the bracket component ({lab})")
        fields[lab] = PolyMap(list(row) + drift, vs)
    vf = VectorFields(fields)
    x0 = X.trace()[0, [X.basis.labels.index(a) for a in letters]]
    state = davie_solve(vf, X, np.concatenate([np.asarray(y0, dtype=float), x0]))
    return ManifoldRDESolution(state.trace[:, :e], state, G, vf, conn_N)
