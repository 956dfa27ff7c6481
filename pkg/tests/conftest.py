import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from macrostate.hilbert import ModelSpec, build_model

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_hermitian(rng, d, scale=1.0):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (x + x.conj().T) / 2


def random_density(rng, d, rank=None):
    rank = rank or d
    x = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def xxz4():
    return build_model(ModelSpec("xxz_chain", 4, {"J": 1.0, "delta": 0.7}))


@pytest.fixture(scope="session")
def xxz4_periodic():
    return build_model(ModelSpec("xxz_chain", 4, {"J": 1.0, "delta": 0.5}, periodic=True))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[2])):
            terminalreporter.write_line(line)
