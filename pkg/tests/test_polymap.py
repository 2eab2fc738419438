from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from branched_rough.polymap import PolyMap

F = PolyMap(["x1**2*x2 + 3", "x1 - x2**3"], ["x1", "x2"])
coords = st.floats(-2, 2, allow_nan=False)


@given(coords, coords)
def test_point_matches_call(a: float, b: float) -> None:
    np.testing.assert_allclose(F.point([a, b]), [a * a * b + 3, a - b**3], rtol=1e-12, atol=1e-12)


def test_vectorised_call() -> None:
    pts = np.array([[0.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(np.asarray(F(pts)).reshape(2, 2), [[3.0, -1.0], [5.0, -7.0]])


def test_diff_and_compose() -> None:
    assert F.diff(0).exprs == (2 * F.variables[0] * F.variables[1], sp.Integer(1))
    assert F.diff(0, 1).exprs == (2 * F.variables[0], sp.Integer(0))
    path = PolyMap(["t", "t**2"], ["t"])
    (t,) = path.variables
    assert sp.expand(F.compose(path).exprs[1] - (t - t**6)) == 0


def test_identity_stack_and_degree() -> None:
    I2 = PolyMap.identity(2)
    assert I2.dim_in == I2.dim_out == 2
    S = PolyMap.stack([F, I2])
    assert S.dim_out == 4
    assert F.degree() == 3


def test_json_roundtrip() -> None:
    G = PolyMap.from_json(F.to_json())
    assert G.exprs == F.exprs and G.variables == F.variables


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_tensor_shape(order: int) -> None:
    T = F.derivative_tensor(np.zeros((3, 2)), order)
    assert T.shape[-order:] == (2,) * order


def test_symbols_are_real() -> None:
    assert all(v.is_real for v in F.variables)
