import pytest

from subsup.domain import Interval01, RadialBall, build_grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ball_grid():
    return build_grid(RadialBall(3), 256, 1.5)


@pytest.fixture(scope="session")
def small_ball_grid():
    return build_grid(RadialBall(3), 64, 1.5)


@pytest.fixture(scope="session")
def interval_grid():
    return build_grid(Interval01(), 128)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
