import pytest

from abpsim.scenario import load_bundled, parse_scenario

# two overlapping cells along a 300 m road, walked in 60 s
SMALL = """
[scenario]
name = "two-cells"

[run]
duration = 70.0
seeds = [1, 2]

[traffic]
interval = 0.02
start = 2.0

[path]
speed = 5.0
waypoints = [[0.0, 0.0], [300.0, 0.0]]

[[ap]]
id = "a"
position = [50.0, 20.0]
range = 120.0
wlan = "west"

[[ap]]
id = "b"
position = [250.0, 20.0]
range = 120.0
wlan = "east"
"""

_acceptance_lines: list[str] = []


@pytest.fixture
def small_text():
    return SMALL


@pytest.fixture
def small_config():
    return parse_scenario(SMALL)


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture(scope="session")
def acceptance_log():
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
