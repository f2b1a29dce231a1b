import pytest

from vlcsim.calibration import load_default_card
from vlcsim.led_device import LedParams
from vlcsim.link_model import LinkConfig

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def card():
    return load_default_card()


@pytest.fixture(scope="session")
def params(card):
    return card.params


@pytest.fixture(scope="session")
def link():
    return LinkConfig()


@pytest.fixture
def eq1_params():
    """Round-number ABC constants used in several hand calculations."""
    return LedParams(A=1e7, B=1e-10, C=1e-29, active_volume=1e-5, I0=1e-25, n_ideality=2.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
