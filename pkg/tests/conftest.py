import os

import pytest
from hypothesis import HealthCheck, settings

from optstop import SystemConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ref_cfg():
    """Ten channels, half idle on average, 5% sensing slots."""
    return SystemConfig(num_channels=10, sensing_fraction=0.05, theta=0.5, mean_gain=1.0,
                        avg_power_budget=10.0, max_mean_delay=1.1)


@pytest.fixture(scope="session")
def small_cfg():
    return SystemConfig(num_channels=3, sensing_fraction=0.1, theta=(0.3, 0.6, 0.8),
                        mean_gain=1.0, avg_power_budget=1.0)


@pytest.fixture(scope="session")
def underlay_cfg():
    return SystemConfig(num_channels=4, sensing_fraction=0.05, theta=0.5, mean_gain=1.0,
                        avg_interference_budget=1.0, detector_samples=10, noise_var=1.0,
                        pu_energy=2.0)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and print it."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        lines.append((n, line))
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
