import pytest

from twincal.detection import ArmConfig, TimingConfig
from twincal.source import SourceConfig

ACCEPTANCE_LINES = []


@pytest.fixture
def timing():
    return TimingConfig()


@pytest.fixture
def operating_point():
    """Balanced binary detectors at eta = 0.257 with singles near 2e-2 per pulse."""
    source = SourceConfig(modes=100, mean_per_mode=0.02 / (100 * 0.257), overlap=1.0)
    arm = ArmConfig(eta0=0.257, dead_time_regime="binary_per_pulse")
    return source, arm, arm


@pytest.fixture
def report():
    def _report(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
