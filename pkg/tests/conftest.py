import numpy as np
import pytest
from hypothesis import settings

from tddbp.channel import FiberParams
from tddbp.signals import make_frame, rrc_shape

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

RATE = 128e9


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_frame():
    return make_frame(3, 1024)


@pytest.fixture(scope="session")
def small_wave(small_frame):
    return rrc_shape(small_frame)


@pytest.fixture
def lossless_fiber():
    return FiberParams(alpha_db_per_km=0.0, span_count=1)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
