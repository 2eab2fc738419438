"""Verification suites shared by the command line and the acceptance tests.

Every function returns :class:`Check` records; a check passes when its
defect is within its tolerance (or, for negative controls, above it).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement, permutations, product
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import sympy as sp

from .brackets import bracket_polynomial
from .controlled import (
    compose_smooth,
    davie_residuals,
    davie_solve,
    identity_controlled,
    kelly_function_defect,
    rough_integral,
)
from .forests import EMPTY, Forest, atom, enumerate_forests, format_forest, multiset_label, parse_forest
from .geometry import (
    Atlas,
    Chart,
    Connection,
    ManifoldRoughPath,
    coordinate_matrices,
    manifold_rde_solve,
    multisets,
    n_perm,
    patched_integral,
    patched_ito_defect,
    quasi_rde_coefficients,
    rde3_coefficients,
    right_inverse_residual,
    transfer_symbols,
    transform_check,
)
from .hopf import (
    AlgElem,
    TensorElem,
    antipode_ck,
    antipode_gl,
    ck_coproduct,
    counit,
    gl_coproduct,
    gl_product,
    pairing,
    parse_word,
    quasi_shuffle,
)
from .lift import pushforward, pushforward_bracket, pushforward_integrand_exprs
from .polymap import PolyMap
from .rough_path import (
    RoughPath,
    chen_report,
    geometric_defect,
    grouplike_report,
    pure_bracket_path,
    quasi_geometric_defect,
    quasi_geometric_lift,
    smooth_lift,
)

__all__ = [
    "Check",
    "CRITERIA",
    "bracket_golden_checks",
    "chart_integration_checks",
    "criterion_check",
    "demo_driver",
    "hopf_checks",
    "lift_checks",
    "pure_bracket_checks",
    "pushforward_bracket_checks",
    "rde_checks",
    "run_criterion",
    "smooth_lift_checks",
    "transfer_checks",
    "transform_checks",
]


@dataclass(frozen=True)
class Check:
    """One verification outcome."""

    id: str
    passed: bool
    defect: float
    tolerance: float
    runtime: float
    detail: str = ""
    negative: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "status": "pass" if self.passed else "fail",
            "defect": self.defect,
            "tolerance": self.tolerance,
            "runtime": round(self.runtime, 4),
            "detail": self.detail,
        }


@dataclass
class _Timer:
    start: float = field(default_factory=time.perf_counter)

    def check(self, id: str, defect: float, tol: float, detail: str = "", negative: bool = False) -> Check:
        now = time.perf_counter()
        passed = defect >= tol if negative else defect <= tol
        out = Check(id, bool(passed), float(defect), float(tol), now - self.start, detail, negative)
        self.start = now
        return out


# --------------------------------------------------------------- Hopf algebra


def _elem(f: Forest) -> AlgElem:
    return AlgElem.basis(f)


def _forest_mult(x: AlgElem, y: AlgElem) -> AlgElem:
    return x * y


def _count(pred: Iterable[bool]) -> int:
    return sum(0 if ok else 1 for ok in pred)


def hopf_checks(letters: int = 2, max_degree: int = 4, min_basis: int = 100) -> list[Check]:
    """Bialgebra axioms, antipodes and graded duality, as exact rational identities.

    Each defect is the number of basis instances violating the identity.
    """
    T = _Timer()
    atoms = [atom(chr(ord("a") + i)) for i in range(letters)]
    basis = enumerate_forests(atoms, max_degree)
    pairs = [(x, y) for x in basis for y in basis if x.degree + y.degree <= max_degree]
    out: list[Check] = []
    out.append(T.check("hopf.basis_size", 0 if len(basis) >= min_basis else 1, 0, f"{len(basis)} forests"))

    def unit_map(c: Fraction) -> AlgElem:
        return AlgElem.unit().scale(c)

    for name, cop, mult, anti in (
        ("ck", ck_coproduct, _forest_mult, antipode_ck),
        ("gl", gl_coproduct, gl_product, antipode_gl),
    ):
        coassoc = _count(
            cop(f).apply_slot(0, cop) == cop(f).apply_slot(1, cop) for f in basis
        )
        out.append(T.check(f"hopf.{name}.coassociativity", coassoc, 0))
        counit_bad = 0
        for f in basis:
            left, right = AlgElem(), AlgElem()
            for (a, b), c in cop(f).terms.items():
                left = left + _elem(b).scale(c * counit(a))
                right = right + _elem(a).scale(c * counit(b))
            counit_bad += 0 if left == _elem(f) == right else 1
        out.append(T.check(f"hopf.{name}.counit", counit_bad, 0))
        assoc = _count(
            mult(mult(_elem(x), _elem(y)), _elem(z)) == mult(_elem(x), mult(_elem(y), _elem(z)))
            for x, y in pairs
            for z in basis
            if x.degree + y.degree + z.degree <= max_degree
        )
        out.append(T.check(f"hopf.{name}.associativity", assoc, 0))
        unit_bad = _count(
            mult(AlgElem.unit(), _elem(f)) == _elem(f) == mult(_elem(f), AlgElem.unit()) for f in basis
        )
        out.append(T.check(f"hopf.{name}.unit", unit_bad, 0))
        compat = _count(
            cop(mult(_elem(x), _elem(y))) == cop(x).slot_product(cop(y), mult) for x, y in pairs
        )
        out.append(T.check(f"hopf.{name}.compatibility", compat, 0))
        counit_mult = _count(
            counit(mult(_elem(x), _elem(y))) == counit(x) * counit(y) for x, y in pairs
        )
        out.append(T.check(f"hopf.{name}.counit_multiplicative", counit_mult, 0))
        for side in ("left", "right"):
            bad = 0
            for f in basis:
                D = cop(f)
                D = D.apply_slot(0, anti) if side == "left" else D.apply_slot(1, anti)
                if D.contract(mult) != unit_map(counit(f)):
                    bad += 1
            out.append(T.check(f"hopf.{name}.antipode_{side}", bad, 0))

    # ⟨Δ_CK z, x⊗y⟩ = ⟨z, x⋆y⟩ and ⟨Δ_GL z, x⊗y⟩ = ⟨z, x·y⟩ over all basis triples.
    cks = {z: ck_coproduct(z).terms for z in basis}
    gls = {z: gl_coproduct(z).terms for z in basis}
    bad_ck = bad_gl = 0
    for x, y in pairs:
        star = gl_product(x, y)
        prod = _elem(x) * _elem(y)
        for z in basis:
            if z.degree != x.degree + y.degree:
                continue
            lhs = cks[z].get((x, y), 0) * pairing(x, x) * pairing(y, y)
            if lhs != pairing(z, star):
                bad_ck += 1
            lhs = gls[z].get((x, y), 0) * pairing(x, x) * pairing(y, y)
            if lhs != pairing(z, prod):
                bad_gl += 1
    out.append(T.check("hopf.duality.ck_star", bad_ck, 0))
    out.append(T.check("hopf.duality.gl_product", bad_gl, 0))
    return out


# ------------------------------------------------------------- golden values


def _alg(*terms: tuple[int, str]) -> AlgElem:
    acc = AlgElem()
    for c, f in terms:
        acc = acc + AlgElem.basis(parse_forest(f)).scale(c)
    return acc


def _tensor(*terms: tuple[int, str, str]) -> TensorElem:
    return TensorElem(2, [((parse_forest(a), parse_forest(b)), c) for c, a, b in terms])


def bracket_golden_checks() -> list[Check]:
    """Closed-form examples: coproduct, ⋆, pairing, bracket polynomials and a quasi-shuffle."""
    T = _Timer()
    out = []
    t = "a(b(d),c)"
    # The cut of the edge a–c prunes c; the pair is written (pruned part) ⊗ (trunk).
    expected = _tensor(
        (1, "0", t),
        (1, "d", "a(b,c)"),
        (1, "d*c", "a(b)"),
        (1, "b(d)", "a(c)"),
        (1, "c*b(d)", "a"),
        (1, "c", "a(b(d))"),
        (1, t, "0"),
    )
    got = ck_coproduct(t)
    out.append(T.check("golden.ck_coproduct", 0 if got == expected and len(got) == 7 else 1, 0, str(got)))
    star = gl_product("d", "a(b,c)")
    want = _alg((1, "d*a(b,c)"), (1, "a(b,c,d)"), (1, "a(b(d),c)"), (1, "a(b,c(d))"))
    out.append(T.check("golden.gl_product", 0 if star == want else 1, 0, str(star)))
    val = pairing("b(a,a)", gl_product("a", "b(a)"))
    out.append(T.check("golden.pairing", abs(float(val) - 2.0), 0, f"value {val}"))
    ab = bracket_polynomial(parse_forest("a*b"))
    out.append(
        T.check("golden.bracket_ab", 0 if ab == _alg((1, "a*b"), (-1, "a(b)"), (-1, "b(a)")) else 1, 0, str(ab))
    )
    abc = bracket_polynomial(parse_forest("a*b*c"))
    want = _alg(
        (1, "a*b*c"),
        (-1, "a(b,c)"),
        (-1, "b(a,c)"),
        (-1, "c(a,b)"),
        (-1, "{bc}(a)"),
        (-1, "{ac}(b)"),
        (-1, "{ab}(c)"),
    )
    out.append(T.check("golden.bracket_abc", 0 if abc == want else 1, 0, str(abc)))
    cba = bracket_polynomial(parse_forest("c*b(a)"))
    want = _alg((1, "c*b(a)"), (-1, "c(b(a))"), (-1, "b(a,c)"), (-1, "{bc}(a)"))
    out.append(T.check("golden.bracket_c_ba", 0 if cba == want else 1, 0, str(cba)))
    qs = quasi_shuffle(parse_word("a{bc}"), parse_word("de"))
    words = [
        "a{bc}de", "ad{bc}e", "da{bc}e", "ade{bc}", "dae{bc}", "dea{bc}",
        "ad{bce}", "da{bce}", "a{bcd}e", "d{ae}{bc}", "{ad}{bc}e", "{ad}e{bc}",
        "{ad}{bce}",
    ]  # fmt: skip
    want_qs = {parse_word(w): Fraction(1) for w in words}
    out.append(T.check("golden.quasi_shuffle", 0 if qs == want_qs and len(qs) == 13 else 1, 0, f"{len(qs)} terms"))
    return out


# -------------------------------------------------------------- rough paths


def smooth_lift_checks(depth: int = 10, p: float = 3.5) -> list[Check]:
    T = _Timer()
    X = smooth_lift(PolyMap(["t", "t**2"], ["t"]), p, depth)
    N = X.npoints - 1
    out = [T.check("lift.component_2(1)", abs(X.value("2(1)", 0, N) - 2 / 3), 1e-10)]
    out.append(T.check("lift.chen", float(chen_report(X).max()), 1e-9))
    out.append(T.check("lift.grouplike", float(grouplike_report(X).max()), 1e-9))
    out.append(T.check("lift.shuffle", max(geometric_defect(X).values()), 1e-9))
    out.append(T.check("lift.quasi_geometric", max(quasi_geometric_defect(X).values()), 1e-9))
    return out


def pure_bracket_checks(depth: int = 8) -> list[Check]:
    T = _Timer()
    X = pure_bracket_path(depth)
    g = PolyMap(["x1**2"], ["x1"])
    N = X.npoints - 1
    pairs = [(0, N), (0, N // 2), (N // 4, N), (3, N - 5)]
    worst = max(kelly_function_defect(g, X, s, t) for s, t in pairs)
    return [T.check("ito.pure_bracket_kelly", worst, 1e-12)]


def demo_driver(
    depth: int, p: float = 3.5, amplitude: str = "1", path: Sequence[str] = ("t/2+t**2/3", "t-t**3/2")
) -> RoughPath:
    """Quasi-geometric two-letter driver with smooth nonzero brackets."""
    a, b = atom("1"), atom("2")
    br = {
        multiset_label([a, a]): PolyMap([f"({amplitude})*t/3"], ["t"]),
        multiset_label([a, b]): PolyMap([f"({amplitude})*t**2/2"], ["t"]),
        multiset_label([b, b]): PolyMap([f"-({amplitude})*t/5"], ["t"]),
    }
    return quasi_geometric_lift(PolyMap(list(path), ["t"]), p, depth, bracket_paths=br)


def _max_forest_diff(A: RoughPath, B: RoughPath) -> tuple[float, str]:
    worst, where = 0.0, ""
    for f in A.basis.forests:
        j = B.basis.index.get(f)
        if j is None or not f.trees:
            continue
        i = A.basis.index[f]
        for L in (0, A.depth):
            d = float(np.max(np.abs(A.levels[L][:, i] - B.levels[L][:, j])))
            if d > worst:
                worst, where = d, format_forest(f)
    return worst, where


def lift_checks(depth: int = 10, p: float = 3.5) -> list[Check]:
    """Pushforward against the lift of the composed path, and associativity."""
    T = _Timer()
    gam = PolyMap(["t", "t**2"], ["t"])
    f = PolyMap(["x1**2*x2 + x2", "x1 - x2**3 + x1*x2"], ["x1", "x2"])
    g = PolyMap(["x1 + x2**2/2", "x2 - x1*x2/3"], ["x1", "x2"])
    X = smooth_lift(gam, p, depth)
    out = []
    d, where = _max_forest_diff(pushforward(f, X), smooth_lift(f.compose(gam), p, depth))
    out.append(T.check("pushforward.oracle", d, 1e-7, where))
    fg = f.compose(g)
    d, where = _max_forest_diff(pushforward(fg, X), pushforward(f, pushforward(g, X), consistency_tol=1e-6))
    out.append(T.check("pushforward.associativity", d, 1e-7, where))
    return out


# -------------------------------------------------------- bracket pushforward


def bracket34_integrands(fmap: PolyMap, i: int, j: int) -> dict[tuple[int, ...], sp.Expr]:
    """Label-form integrands of the level-2 pushforward bracket at order ≤ 3, from the closed form.

    ∫ ∂_αf^i ∂_βf^j dX^(αβ) + ½ ∫ (∂_{αγ}f^i ∂_βf^j + ∂_αf^i ∂_{βγ}f^j) dX^(αβγ), each
    tuple sum collected on its multiset.
    """
    m = fmap.dim_in
    d = lambda k, *idx: fmap.diff(*idx).exprs[k]  # noqa: E731
    out: dict[tuple[int, ...], sp.Expr] = {}
    for a, b in product(range(m), repeat=2):
        key = tuple(sorted((a, b)))
        out[key] = out.get(key, 0) + d(i, a) * d(j, b)
    for a, b, c in product(range(m), repeat=3):
        key = tuple(sorted((a, b, c)))
        out[key] = out.get(key, 0) + sp.Rational(1, 2) * (d(i, a, c) * d(j, b) + d(i, a) * d(j, b, c))
    return {k: sp.expand(v) for k, v in out.items()}


def pushforward_bracket_checks(depth: int = 10) -> list[Check]:
    T = _Timer()
    out = []
    # Symbolic identity with undefined functions.
    x1, x2 = sp.symbols("x1 x2", real=True)
    F1, F2 = sp.Function("f1")(x1, x2), sp.Function("f2")(x1, x2)
    fsym = PolyMap([F1, F2], [x1, x2], exact=False)
    letters = [atom("1"), atom("2")]
    exprs = pushforward_integrand_exprs(fsym, letters, 3)
    bad = 0
    for i, j in ((0, 0), (0, 1), (1, 1)):
        target = multiset_label([atom(str(i + 1)), atom(str(j + 1))])
        got = exprs[target]
        want = bracket34_integrands(fsym, i, j)
        for key in multisets(2, 3):
            lab = letters[key[0]] if len(key) == 1 else multiset_label([letters[k] for k in key])
            g = got.get(lab)
            gv = g.exprs[0] if g is not None else 0
            if sp.simplify(sp.expand(gv - want.get(key, 0))) != 0:
                bad += 1
    out.append(T.check("bracket34.symbolic", bad, 0))
    # Numeric: bracket trace against the closed-form integrands integrated on the same grid.
    f = PolyMap(["x1**2*x2 + x2**4/4", "x1 - x2**3 + x1**2*x2**2"], ["x1", "x2"])
    X = demo_driver(depth)
    PB = pushforward_bracket(f, X, tol=1.0)
    Id = identity_controlled(X)
    worst = 0.0
    N = X.npoints - 1
    for i, j in ((0, 0), (0, 1), (1, 1)):
        integrand = {}
        for key, e in bracket34_integrands(f, i, j).items():
            lab = multiset_label([X.letters()[k] for k in key])
            integrand[lab] = compose_smooth(PolyMap([e], f.variables), Id)
        ref = rough_integral(integrand, X, 0, N)[0]
        lab = multiset_label([atom(str(i + 1)), atom(str(j + 1))])
        got = PB.trace(lab)[N] - PB.trace(lab)[0]
        worst = max(worst, abs(got - ref))
    out.append(T.check("bracket34.numeric", worst, 1e-7))
    return out


# -------------------------------------------------------------- geometry


def _closed_form_errors(C: Connection, pts: np.ndarray) -> float:
    m = C.dim
    ms, num = transfer_symbols(C, pts, 3)
    idx = {c: i for i, c in enumerate(ms)}
    xs = C.variables
    G = sp.lambdify(xs, C.array(), "numpy")
    dG = sp.lambdify(xs, [[[[sp.diff(C.gamma(g, a, b), x) for x in xs] for b in range(m)] for a in range(m)] for g in range(m)], "numpy")
    worst = 0.0
    for p, x in enumerate(pts):
        Gv = np.array(G(*x), dtype=float)
        dGv = np.array(dG(*x), dtype=float)  # [λ][α][β][γ] = ∂_γ Γ^λ_{αβ}
        sym = (Gv + np.transpose(Gv, (0, 2, 1))) / 2
        for l in range(m):
            for a, b in product(range(m), repeat=2):
                worst = max(worst, abs(sym[l, a, b] - num[p, idx[(l,)], idx[tuple(sorted((a, b)))]]))
            for a, b, c in product(range(m), repeat=3):
                # symmetrisation over all six orderings of (α, β, γ)
                allv = [dGv[l, A, B, Cc] + sym[l, Cc, :] @ Gv[:, A, B] for A, B, Cc in permutations((a, b, c))]
                worst = max(worst, abs(np.mean(allv) - num[p, idx[(l,)], idx[tuple(sorted((a, b, c)))]]))
    return worst


def transfer_checks(seed: int = 0, npoints: int = 20) -> list[Check]:
    T = _Timer()
    rng = np.random.default_rng(seed)
    conns = [
        Connection.random(2, rng, degree=2, torsion=True),
        Connection.random(2, rng, degree=1, torsion=True),
        Connection.random(3, rng, degree=1, torsion=True),
    ]
    out = []
    worst = 0.0
    for C in conns:
        if not C.has_torsion():
            raise AssertionError("random connection without torsion")
        pts = rng.uniform(-1, 1, (npoints, C.dim))
        worst = max(worst, _closed_form_errors(C, pts))
    out.append(T.check("transfer.closed_forms", worst, 1e-12, f"{len(conns)} connections × {npoints} points"))
    worst = 0.0
    for C in conns:
        for x in rng.uniform(-1, 1, (2, C.dim)):
            worst = max(worst, right_inverse_residual(C, x, 3))
    out.append(T.check("transfer.right_inverse", worst, 1e-10))
    flat = Connection.flat(2)
    ms, num = transfer_symbols(flat, [[0.3, -0.4]], 3)
    out.append(T.check("transfer.flat_identity", float(np.max(np.abs(num[0] - np.diag([1 / n_perm(c) for c in ms])))), 0))
    return out


def _random_transition(m: int, rng: np.random.Generator, variables: Sequence[sp.Symbol]) -> PolyMap:
    comps = []
    for k in range(m):
        e = variables[k]
        for deg in (2, 3):
            for mono in combinations_with_replacement(variables, deg):
                e += sp.Rational(int(rng.integers(-3, 4)), 6) * sp.Mul(*mono)
        comps.append(e)
    return PolyMap(comps, variables)


def transform_checks(seed: int = 1) -> list[Check]:
    T = _Timer()
    rng = np.random.default_rng(seed)
    worst = 0.0
    neg = 0.0
    worst_ba = 0.0
    cases = 0
    for m, n, reps in ((1, 3, 2), (2, 2, 2), (2, 3, 2), (3, 3, 1)):
        for _ in range(reps):
            C = Connection.random(m, rng, degree=2 if m < 3 else 1, torsion=True)
            phi = _random_transition(m, rng, C.variables)
            x0 = [sp.Rational(int(rng.integers(-4, 5)), 10) for _ in range(m)]
            worst = max(worst, transform_check(C, phi, x0, n))
            cases += 1
            if n == 3 and C.has_torsion():
                neg = max(neg, transform_check(C, phi, x0, 3, c=1))
            A, B = coordinate_matrices(phi, x0, n)
            for M in range(1, n + 1):
                for N in range(M, n + 1):
                    BA = sum(B[(M, K)] @ A[(K, N)] for K in range(M, N + 1))
                    if M == N:
                        target = _symmetrizer(m, M)
                    else:
                        target = np.zeros_like(BA)
                    worst_ba = max(worst_ba, float(np.max(np.abs(BA - target))))
    out = [T.check("transform.transfer_symbols", worst, 1e-8, f"{cases} random transitions")]
    out.append(T.check("transform.c1_negative_control", neg, 1e-3, "S(1) with torsion must fail", negative=True))
    out.append(T.check("transform.B_inverts_A", worst_ba, 1e-10))
    return out


def _symmetrizer(m: int, r: int) -> np.ndarray:
    tuples = list(product(range(m), repeat=r))
    index = {t: i for i, t in enumerate(tuples)}
    S = np.zeros((len(tuples), len(tuples)))
    perms = list(permutations(range(r)))
    for t in tuples:
        for p in perms:
            S[index[t], index[tuple(t[i] for i in p)]] += 1 / len(perms)
    return S


def chart_integration_checks(depth: int = 10, seed: int = 3) -> list[Check]:
    T = _Timer()
    rng = np.random.default_rng(seed)
    X = demo_driver(depth)
    C = Connection.random(2, rng, degree=1, torsion=True, variables=["x1", "x2"])
    atlas = Atlas(
        {"B": Chart.shear(2, "t**2/2 + t**3/3")},
        {"reference": ((-1.0, 0.5), (-1.0, 2.0)), "B": ((0.2, 2.0), (-1.0, 2.0))},
    )
    MX = ManifoldRoughPath.from_reference(atlas, X)
    N = X.npoints - 1
    form = PolyMap(["1 + x2**2", "x1*x2 - x1"], ["x1", "x2"])
    decompositions = {
        "reference": [("reference", 0, N)],
        "chart_B": [("B", 0, N)],
        "greedy": atlas.partition(MX.reference_trace(), 0, N),
        "split": [("B", 0, N // 3), ("reference", N // 3, 2 * N // 3), ("B", 2 * N // 3, N)],
    }
    vals = {k: patched_integral(form, C, MX, 0, N, cells) for k, cells in decompositions.items()}
    spread = max(vals.values()) - min(vals.values())
    out = [T.check("manifold.chart_independence", spread, 1e-7, f"integral {vals['reference']:.12f}")]
    flat = patched_integral(form, Connection.flat(2, ["x1", "x2"]), MX, 0, N, decompositions["reference"])
    out.append(
        T.check("manifold.connection_matters", abs(flat - vals["reference"]), 1e-3, "flat vs curved", negative=True)
    )
    g = PolyMap(["x1**2*x2 + x2 - x1**3/3"], ["x1", "x2"])
    ito = max(patched_ito_defect(g, C, MX, 0, N, cells) for cells in decompositions.values())
    out.append(T.check("manifold.ito_kelly", ito, 1e-7))
    return out


def rde_checks(depths: Sequence[int] = (6, 7, 8, 9, 10, 11, 12), seed: int = 5, p: float = 3.5) -> list[Check]:
    T = _Timer()
    out = []
    e, m = 2, 2
    ys = sp.symbols("y1:3", real=True)
    g = [
        [[sp.Symbol(f"g{k}{i}{j}") + sum(sp.Symbol(f"d{h}g{k}{i}{j}") * ys[h] for h in range(e)) for j in range(e)] for i in range(e)]
        for k in range(e)
    ]
    CN = Connection(g, ys, exact=False)
    CM = Connection.flat(m, ["x1", "x2"])
    F = [[sp.Symbol(f"f{k}{a}") for a in range(m)] for k in range(e)]
    G = quasi_rde_coefficients(F, CN, CM, 3)
    R = rde3_coefficients(F, CN, m)
    bad = sum(1 for C in R for k in range(e) if sp.expand(G[C][k] - R[C][k]) != 0)
    out.append(T.check("rde.order3_closed_form", bad, 0, f"{len(R)} labels × {e} components"))

    xs = sp.symbols("x1:3", real=True)
    Fn = [[ys[1] / 2, 1 - ys[0] * ys[1] / 4], [1 + ys[0] / 3, ys[0] / 2]]
    y0 = [0.1, -0.2]
    X = demo_driver(10, p)
    sol = manifold_rde_solve(Fn, Connection.flat(2, ys), Connection.flat(2, xs), X, y0)
    vf = {X.letters()[a]: PolyMap([Fn[0][a], Fn[1][a]], ys) for a in range(m)}
    Yd = davie_solve(vf, X, y0).trace
    out.append(T.check("rde.flat_matches_davie", float(np.max(np.abs(sol.Y - Yd))), 1e-10))

    rng = np.random.default_rng(seed)
    CNr = Connection.random(2, rng, degree=1, torsion=True, variables=ys)
    CMr = Connection.random(2, rng, degree=1, torsion=True, variables=xs)
    Fr = [[ys[1] / 2 + xs[0] / 3, 1 - ys[0] * ys[1] / 4], [1 + ys[0] / 3, ys[0] / 2 - xs[1] / 5]]
    top = max(depths)
    Xt = demo_driver(top, p)
    solr = manifold_rde_solve(Fr, CNr, CMr, Xt, y0)
    levels = [L for L in depths if L < top]
    res = davie_residuals(solr.fields, Xt, solr.state.trace, levels)
    slope = -np.polyfit(np.array(levels, dtype=float), np.log2([res[L] for L in levels]), 1)[0]
    target = (int(np.floor(p)) + 1) / p - 0.1
    out.append(T.check("rde.davie_slope", target - slope, 0.0, f"slope {slope:.3f}, required ≥ {target:.3f}"))
    return out


CRITERIA: dict[int, tuple[str, Callable[[], list[Check]]]] = {
    1: ("Hopf exactness", hopf_checks),
    2: ("Golden values", bracket_golden_checks),
    3: ("Smooth geometric lift", smooth_lift_checks),
    4: ("Pure-bracket Itô check", pure_bracket_checks),
    5: ("Lift/pushforward oracle", lift_checks),
    6: ("Bracket pushforward", pushforward_bracket_checks),
    7: ("Transfer symbols", transfer_checks),
    8: ("Coordinate transformation", transform_checks),
    9: ("Chart-invariant integration", chart_integration_checks),
    10: ("Manifold RDE recursion", rde_checks),
}


# Offsets from the base seed for the randomised sweeps; base 0 reproduces the defaults.
_SEED_OFFSETS = {7: 0, 8: 1, 9: 3, 10: 5}


def run_criterion(k: int, seed: int = 0) -> tuple[str, list[Check]]:
    name, fn = CRITERIA[k]
    if k in _SEED_OFFSETS:
        return name, fn(seed=seed + _SEED_OFFSETS[k])
    return name, fn()


def criterion_check(k: int, checks: Sequence[Check]) -> Check:
    """One summary check per criterion: passes iff every constituent check passes."""
    failing = [c.id for c in checks if not c.passed]
    return Check(
        f"criterion.{k}",
        not failing,
        float(len(failing)),
        0.0,
        sum(c.runtime for c in checks),
        f"{CRITERIA[k][0]}; failing: {', '.join(failing)}" if failing else CRITERIA[k][0],
    )
