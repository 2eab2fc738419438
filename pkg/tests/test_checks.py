from __future__ import annotations

import pytest

from branched_rough.checks import CRITERIA, Check, _Timer, run_criterion


@pytest.mark.parametrize(
    ("defect", "tol", "negative", "passed"),
    [(0.0, 0.0, False, True), (1e-9, 1e-8, False, True), (1e-7, 1e-8, False, False), (0.5, 1e-3, True, True), (0.0, 1e-3, True, False)],
)
def test_check_semantics(defect: float, tol: float, negative: bool, passed: bool) -> None:
    c = _Timer().check("x", defect, tol, negative=negative)
    assert isinstance(c, Check) and c.passed is passed
    assert c.to_json()["status"] == ("pass" if passed else "fail")


def test_criteria_table() -> None:
    assert sorted(CRITERIA) == list(range(1, 11))
    name, checks = run_criterion(2)
    assert name == "Golden values" and all(c.passed for c in checks)
