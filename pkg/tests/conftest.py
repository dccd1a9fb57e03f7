import os

# numba fixes its pool size at import; the acceptance speedup check needs 4
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leafcontrast import SynthPlantParams, synth_plant

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def plant():
    return synth_plant(SynthPlantParams(n_leaves=4, points_per_leaf=60, stem_points=8, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_report

    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_report.LINES):
            terminalreporter.write_line(acceptance_report.LINES[number])
