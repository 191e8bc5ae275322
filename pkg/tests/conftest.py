import pytest

from secureprune import accumulator as acc
from secureprune.consensus import ChainParams, PruneConfig


@pytest.fixture(scope="session")
def toy():
    return acc.GroupParams.test()


@pytest.fixture(scope="session")
def medium():
    return acc.GroupParams.test_medium()


@pytest.fixture(scope="session")
def production():
    return acc.GroupParams.production()


@pytest.fixture(scope="session")
def chain_params(medium):
    return ChainParams(medium)


@pytest.fixture(scope="session")
def small_prune():
    return PruneConfig(delta_s=5, k=3)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        ok, line = module.RESULTS[n]
        terminalreporter.write_line(("PASS " if ok else "FAIL ") + line)
