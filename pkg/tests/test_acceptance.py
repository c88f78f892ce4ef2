"""Acceptance gate: every numbered criterion must hold at its pinned tolerance.

Each test prints one [PASS]/[FAIL] line with the measured values so the gate
can be audited from the test log; run with ``-s`` (or read captured output)
to see every line.
"""

import pytest

from deepo.acceptance import CRITERIA, run_criterion

SEED = 0


@pytest.mark.parametrize(
    "number, name",
    [(number, name) for number, name, _ in CRITERIA],
    ids=[f"{number:02d}-{name}" for number, name, _ in CRITERIA],
)
def test_criterion(number, name):
    result = run_criterion(number, seed=SEED)
    tag = "PASS" if result.passed else "FAIL"
    print(f"[{tag}] {number:2d} {name}: {result.detail} ({result.elapsed_s:.2f}s)")
    assert result.passed, f"criterion {number} ({name}): {result.detail}"
