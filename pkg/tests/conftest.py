import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False, help="run the long N=4 reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow"):
        return
    skip = pytest.mark.skip(reason="needs --slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def random_density(rng, n, rank=None):
    k = n if rank is None else rank
    a = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    m = a @ a.conj().T
    return m / np.trace(m).real
