import numpy as np
import pytest

# criterion number -> list of (label, passed, detail)
_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    def record(number, label, passed, detail):
        _CRITERIA.setdefault(number, []).append((label, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{label}: {'ok' if ok else 'FAILED'} ({d})" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {number:>2} {status}  {detail}")
