"""Polynomial maps ℝⁿ → ℝᵐ with exact rational coefficients.

A thin layer over sympy: exact differentiation and composition, plus cached
``lambdify`` for vectorised float evaluation.
"""

from __future__ import annotations

from itertools import combinations_with_replacement, permutations
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

__all__ = ["PolyMap"]


def _symbols(variables: Sequence[str | sp.Symbol] | int, prefix: str = "x") -> tuple[sp.Symbol, ...]:
    if isinstance(variables, int):
        return tuple(sp.Symbol(f"{prefix}{i + 1}", real=True) for i in range(variables))
    return tuple(v if isinstance(v, sp.Symbol) else sp.Symbol(v, real=True) for v in variables)


class PolyMap:
    """Vector of polynomials in a fixed tuple of variables.

    With ``exact=True`` (the default) every component must be a polynomial
    with rational coefficients.  ``exact=False`` admits symbolic
    coefficients or undefined functions for identity checks; such maps can
    be differentiated and composed but not evaluated numerically.
    """

    __slots__ = ("variables", "exprs", "exact", "_fn", "_diff")

    def __init__(
        self,
        components: Iterable[Any],
        variables: Sequence[str | sp.Symbol] | int,
        *,
        exact: bool = True,
    ) -> None:
        self.variables = _symbols(variables)
        local = {v.name: v for v in self.variables}
        exprs = []
        for c in components:
            e = sp.sympify(c, locals=local, rational=True) if isinstance(c, str) else sp.sympify(c)
            exprs.append(sp.expand(e) if exact else e)
        self.exprs = tuple(exprs)
        self.exact = exact
        if exact:
            for e in self.exprs:
                poly = sp.Poly(e, *self.variables) if self.variables else None
                if poly is not None and not poly.domain.is_QQ and not poly.domain.is_ZZ:
                    raise ValueError(f"component {e} is not a rational polynomial in {self.variables}")
                if poly is None and not e.is_Rational:
                    raise ValueError(f"constant component {e} is not rational")
        self._fn = None
        self._diff: dict[tuple[int, ...], PolyMap] = {}

    # construction ---------------------------------------------------------

    @classmethod
    def identity(cls, n: int, variables: Sequence[str | sp.Symbol] | None = None) -> PolyMap:
        vs = _symbols(variables if variables is not None else n)
        return cls(list(vs), vs)

    @classmethod
    def constant(cls, values: Sequence[Any], variables: Sequence[str | sp.Symbol] | int) -> PolyMap:
        return cls([sp.Rational(v) if not isinstance(v, sp.Basic) else v for v in values], variables)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> PolyMap:
        """``{"variables": ["x1", ...], "components": ["x1**2 - x2", ...]}``."""
        return cls(list(obj["components"]), list(obj["variables"]))

    def to_json(self) -> dict[str, Any]:
        return {"variables": [v.name for v in self.variables], "components": [str(e) for e in self.exprs]}

    @property
    def dim_in(self) -> int:
        return len(self.variables)

    @property
    def dim_out(self) -> int:
        return len(self.exprs)

    def __repr__(self) -> str:
        return f"PolyMap({[str(e) for e in self.exprs]}, {[v.name for v in self.variables]})"

    def __getitem__(self, k: int | slice) -> PolyMap:
        sel = self.exprs[k] if isinstance(k, slice) else (self.exprs[k],)
        return PolyMap(sel, self.variables, exact=self.exact)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyMap):
            return NotImplemented
        return self.variables == other.variables and all(
            sp.expand(a - b) == 0 for a, b in zip(self.exprs, other.exprs)
        ) and self.dim_out == other.dim_out

    def __hash__(self) -> int:
        return hash((self.variables, self.exprs))

    def _like(self, exprs: Iterable[Any]) -> PolyMap:
        return PolyMap(list(exprs), self.variables, exact=self.exact)

    def __add__(self, other: PolyMap) -> PolyMap:
        return self._like(a + b for a, b in zip(self.exprs, other.exprs, strict=True))

    def __sub__(self, other: PolyMap) -> PolyMap:
        return self._like(a - b for a, b in zip(self.exprs, other.exprs, strict=True))

    def __neg__(self) -> PolyMap:
        return self._like(-a for a in self.exprs)

    def scale(self, c: Any) -> PolyMap:
        c = sp.Rational(c) if isinstance(c, (int, float, str)) else c
        return self._like(c * a for a in self.exprs)

    def __mul__(self, other: PolyMap | Any) -> PolyMap:
        """Scalar multiple, or componentwise product with a scalar-valued map."""
        if isinstance(other, PolyMap):
            if other.dim_out != 1:
                raise ValueError("can only multiply by a scalar-valued map")
            return self._like(a * other.exprs[0] for a in self.exprs)
        return self.scale(other)

    __rmul__ = __mul__

    @staticmethod
    def stack(maps: Sequence[PolyMap]) -> PolyMap:
        exact = all(m.exact for m in maps)
        return PolyMap([e for m in maps for e in m.exprs], maps[0].variables, exact=exact)

    # calculus -------------------------------------------------------------

    def diff(self, *idx: int) -> PolyMap:
        """Partial derivative along the variable indices (order irrelevant)."""
        key = tuple(sorted(idx))
        if not key:
            return self
        hit = self._diff.get(key)
        if hit is None:
            base = self.diff(*key[:-1])
            v = self.variables[key[-1]]
            hit = PolyMap([sp.diff(e, v) for e in base.exprs], self.variables, exact=self.exact)
            self._diff[key] = hit
        return hit

    def compose(self, inner: PolyMap) -> PolyMap:
        """self ∘ inner."""
        if inner.dim_out != self.dim_in:
            raise ValueError(f"cannot compose: inner has {inner.dim_out} outputs, outer takes {self.dim_in}")
        sub = dict(zip(self.variables, inner.exprs))
        exact = self.exact and inner.exact
        return PolyMap([e.xreplace(sub) for e in self.exprs], inner.variables, exact=exact)

    def substitute(self, mapping: Mapping[sp.Symbol, Any]) -> PolyMap:
        return self._like(e.xreplace(dict(mapping)) for e in self.exprs)

    def degree(self) -> int:
        return max((sp.Poly(e, *self.variables).total_degree() for e in self.exprs if e != 0), default=0)

    # evaluation -----------------------------------------------------------

    def at(self, point: Sequence[Any]) -> list[sp.Expr]:
        """Exact values at a point."""
        sub = {v: sp.nsimplify(p) if isinstance(p, float) else sp.sympify(p) for v, p in zip(self.variables, point)}
        return [e.xreplace(sub) for e in self.exprs]

    def _compiled(self) -> Any:
        if self._fn is None:
            self._fn = sp.lambdify(self.variables, list(self.exprs), modules="numpy", cse=True)
        return self._fn

    def point(self, x: Sequence[float]) -> np.ndarray:
        """Float evaluation at a single point, without broadcasting overhead."""
        return np.array(self._compiled()(*x), dtype=float)

    def __call__(self, points: Any) -> np.ndarray:
        """Float evaluation; points of shape (..., dim_in) give values of shape (..., dim_out)."""
        self._compiled()
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim_in:
            raise ValueError(f"expected trailing dimension {self.dim_in}, got {pts.shape}")
        lead = pts.shape[:-1]
        cols = [pts[..., i] for i in range(self.dim_in)]
        vals = self._fn(*cols)
        out = np.empty(lead + (self.dim_out,))
        for k, v in enumerate(vals):
            out[..., k] = np.broadcast_to(np.asarray(v, dtype=float), lead)
        return out

    def derivative_tensor(self, points: Any, order: int) -> np.ndarray:
        """Array of shape (..., dim_out, dim_in, …, dim_in) holding all partials of the order."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        n = self.dim_in
        out = np.empty(lead + (self.dim_out,) + (n,) * order)
        for idx in combinations_with_replacement(range(n), order):
            vals = self.diff(*idx)(pts)
            for perm in set(permutations(idx)):
                out[(Ellipsis, slice(None)) + perm] = vals
        return out
