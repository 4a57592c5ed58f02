import numpy as np
import pytest

from ioncavity import model, spectroscopy
from ioncavity.units import mhz


@pytest.fixture(scope="session")
def small_map():
    """Coarse 5 x 5 Raman-shift map, cheap enough for unit tests."""
    return spectroscopy.build_delta_map(mhz(np.linspace(14, 18, 5)), mhz(np.linspace(-28, 4, 5)),
                                        model.probe_params(), max_refine=0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
