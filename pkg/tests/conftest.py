import sys
from pathlib import Path

import pytest
from hypothesis import settings

from sovorch.model import TelemetrySnapshot

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

from helpers import both, site, wl  # noqa: E402


@pytest.fixture
def one_site():
    snap = TelemetrySnapshot(0.0, (site("S1", cap=100.0, permit=500.0),), ())
    return snap, [wl("w1")]


@pytest.fixture
def two_sites():
    """A dirty near site and a clean far one, 5 ms apart."""
    snap = TelemetrySnapshot(0.0, (site("S1", carbon=450.0), site("S2", carbon=100.0)),
                             tuple(both("S1", "S2", delay=5.0)))
    return snap


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")
