import numpy as np
import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Record ``(number, title, passed, detail)`` for the acceptance summary."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def crafted_3x3():
    """3x3 ground truth (10, 0) with per-pixel errors 1..9 px.

    The bottom-right pixel is invalid everywhere, the bottom row is occluded.
    Hand-computed: ALL = 36/8 = 4.5, NOC = 21/6 = 3.5, OCC = 15/2 = 7.5,
    Fl-all = 5/8 (errors 4..8 exceed both 3 px and 5% of 10 px).
    """
    from occflow.flowio import FlowFile

    k = np.arange(1, 10, dtype=np.float64).reshape(3, 3)
    gt = np.zeros((3, 3, 2))
    gt[..., 0] = 10.0
    est = gt.copy()
    est[..., 1] = k
    occ_valid = np.ones((3, 3), dtype=bool)
    occ_valid[2, 2] = False
    noc_valid = occ_valid.copy()
    noc_valid[2] = False
    expected = dict(epe_all=4.5, epe_noc=3.5, epe_occ=7.5, fl_all=5 / 8, n_all=8, n_noc=6, n_occ=2)
    return est, FlowFile(gt, occ_valid), FlowFile(gt, noc_valid), expected
