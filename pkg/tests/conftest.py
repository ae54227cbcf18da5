import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_NAMES = ("astronaut", "coffee", "chelsea")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(analytic, reference):
    """Max abs deviation scaled by the reference's largest entry."""
    analytic, reference = np.asarray(analytic), np.asarray(reference)
    scale = max(float(np.max(np.abs(reference))), 1e-8)
    return float(np.max(np.abs(analytic - reference))) / scale


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    ran = {int(r.nodeid.rsplit("test_c", 1)[1][:2])
           for key in ("passed", "failed", "error")
           for r in terminalreporter.stats.get(key, []) if "test_acceptance.py::test_c" in r.nodeid}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        terminalreporter.write_line(mod.RESULTS.get(n, f"C{n:02d} FAIL  (raised before reporting)"))
