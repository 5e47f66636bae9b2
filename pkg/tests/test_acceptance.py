"""Every acceptance criterion at its stated tolerance, full level."""

import pytest

from conftest import ACCEPTANCE_LINES
from crw2d.verify import CRITERIA, run_criterion


@pytest.mark.parametrize("cid", sorted(CRITERIA))
def test_criterion(cid):
    r = run_criterion(cid, "full")
    print(r.line())
    ACCEPTANCE_LINES.append(r.line())
    assert r.passed, r.line()
