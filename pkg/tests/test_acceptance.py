from __future__ import annotations

import pytest

from branched_rough.checks import CRITERIA, run_criterion


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k: int, record_criterion) -> None:
    name, checks = run_criterion(k)
    ok = all(c.passed for c in checks)
    record_criterion(k, name, ok)
    for c in checks:
        print(f"{'pass' if c.passed else 'FAIL'} {c.id} defect={c.defect:.3e} tol={c.tolerance:.1e}")
    assert ok, [c.id for c in checks if not c.passed]
