"""Acceptance criteria A1-A12, each at its stated tolerance.

The profile comes from ``EPSFP_ACCEPT_PROFILE``: ``extended`` (default) trains
the EPS-CNN and IQ-CNN for A8 and A9; ``default`` uses the nearest-centroid
fast path. Each test prints one PASS/FAIL line.
"""

import os

import pytest

from epsfp.acceptance import CRITERIA, Context, run_criterion

PROFILE = os.environ.get("EPSFP_ACCEPT_PROFILE", "extended")


@pytest.fixture(scope="module")
def ctx():
    return Context(PROFILE)


@pytest.mark.slow
@pytest.mark.parametrize("cid", list(CRITERIA))
def test_criterion(cid, ctx, capsys):
    res = run_criterion(cid, ctx)
    with capsys.disabled():
        print(f"\n[{PROFILE}] {res.line()}")
    assert res.passed, res.line()
