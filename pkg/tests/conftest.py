import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "lab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("lab")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_gauss():
    """Default flow-matching run on N(0,1) -> N(2, 0.25), shared across modules."""
    from distlab.experiments import REGISTRY

    exp = REGISTRY["interp_train"]
    t0 = time.perf_counter()
    res = exp.run(dict(exp.defaults), 0)
    res.log.extras["seconds"] = time.perf_counter() - t0
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
