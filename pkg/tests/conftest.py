import numpy as np
import pytest
from hypothesis import settings

from ccdenoise.nn import NetConfig

# first calls pay for numba compilation, so wall-clock deadlines are meaningless
settings.register_profile("ccdenoise", deadline=None, max_examples=50)
settings.load_profile("ccdenoise")


@pytest.fixture
def tiny_config():
    return NetConfig(levels=1, base_channels=2, aspp_rates=(1, 2), input_size=(8, 8))


@pytest.fixture
def small_config():
    return NetConfig(levels=2, base_channels=4, aspp_rates=(1, 2), input_size=(16, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
