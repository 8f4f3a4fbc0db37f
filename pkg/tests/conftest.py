import sys

import numpy as np
import pytest

from cavitycool.model import Geometry, SystemParams
from cavitycool.units import mhz_to_rad


@pytest.fixture
def params():
    return SystemParams()


@pytest.fixture
def geometry():
    return Geometry()


@pytest.fixture
def capture_params():
    return SystemParams(delta_c=mhz_to_rad(2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_points(rng, n, half_width=(2e-6, 2e-6, 8e-6)):
    """Positions near the crossing point (m)."""
    return rng.uniform(-1.0, 1.0, (n, 3)) * np.asarray(half_width)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance")
    for order in sorted(results):
        name, ok, detail = results[order]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
