import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a criterion outcome; the terminal summary prints one line each."""

    def record(number, passed, detail):
        # parametrised criteria report several parts; all must pass
        if number in _CRITERIA:
            prev_ok, prev_detail = _CRITERIA[number]
            passed, detail = prev_ok and passed, f"{prev_detail}; {detail}"
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
