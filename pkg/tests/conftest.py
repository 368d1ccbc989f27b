import numpy as np
import pytest

from leansplat import adcore as ad
from leansplat.threads import set_threads


@pytest.fixture(autouse=True, scope="session")
def _single_precision_threads():
    set_threads()
    yield


@pytest.fixture(autouse=True)
def _f64_default():
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ----------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion
# ----------------------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()
N_CRITERIA = 9


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` and echo it immediately."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(k: int, passed: bool, detail: str) -> bool:
        line = f"criterion {k}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines[k] = line
        tr = request.config.pluginmanager.get_plugin("terminalreporter")
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    ran = any("test_acceptance" in str(getattr(r, "nodeid", ""))
              for key in ("passed", "failed", "error") for r in terminalreporter.stats.get(key, []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(lines.get(k, f"criterion {k}: FAIL | did not complete (not run or errored)"))
