"""Acceptance battery: one test per criterion, each printing a single status line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines inline;
they also appear in the captured output of failing tests.
"""
import pytest

from fedrep_lab import acceptance


def _run(check):
    result = check()
    print(f"[{result.status}] criterion {result.number}: {result.name} :: {result.detail}")
    return result


@pytest.mark.parametrize(
    "check",
    [
        acceptance.check_1,
        acceptance.check_2,
        acceptance.check_3,
        acceptance.check_4,
        acceptance.check_5,
        acceptance.check_6,
        acceptance.check_7,
        acceptance.check_8,
        acceptance.check_9,
        acceptance.check_10,
        acceptance.check_11,
    ],
    ids=lambda c: c.__name__.replace("check_", "criterion_"),
)
def test_criterion(check):
    result = _run(check)
    assert result.passed, result.detail


def test_negative_control():
    result = _run(acceptance.check_negative_control)
    assert result.ok, result.detail
