"""End-to-end acceptance criteria at full resolution and stated tolerances.

Each criterion prints one [PASS]/[FAIL] line; the lines are repeated in the
terminal summary.
"""
from __future__ import annotations

import pytest

from hkgeom.acceptance import CHECKS, run_check

RESULTS = []


@pytest.mark.parametrize("number", range(1, len(CHECKS) + 1))
def test_criterion(number):
    res = run_check(number, quick=False)
    RESULTS.append(res)
    print(res.line())
    assert res.passed, res.line()
