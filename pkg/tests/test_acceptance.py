"""Acceptance criteria at desk resolution, one PASS/FAIL line per measured quantity."""

import pytest

from lightray import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("criterion", acceptance.CRITERIA, ids=lambda c: c.__name__)
def test_acceptance(criterion, capsys):
    results = criterion(fast=False)
    with capsys.disabled():
        print()
        for r in results:
            print("    " + r.line())
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"failed: {failed}"
