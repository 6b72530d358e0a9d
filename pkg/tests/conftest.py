import pytest
from hypothesis import HealthCheck, settings

from rwre.env_model import DiscreteLaw, Homogeneous

settings.register_profile("rwre", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rwre")


@pytest.fixture
def biased_line():
    return Homogeneous.one_dim(0.75)


@pytest.fixture
def two_point_transient():
    """Law with omega(x, +1) in {0.3, 0.9} equally likely."""
    return DiscreteLaw.two_point(0.3, 0.9)


@pytest.fixture
def drift_2d():
    """Two-dimensional law with mean drift 0.1 along e1 and both kernels
    pointing along e1."""
    return DiscreteLaw(2, ((0.35, 0.15, 0.25, 0.25), (0.3, 0.2, 0.25, 0.25)), (0.5, 0.5))


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """List collecting one ``PASS``/``FAIL`` line per acceptance criterion."""
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
