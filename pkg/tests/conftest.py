import sys

import numpy as np
import pytest

from hiermodel import fixture, kernels


@pytest.fixture(scope="session")
def fx():
    return fixture.load()


@pytest.fixture(scope="session")
def mimic_sample(fx):
    return fx.mimic_moments()


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def kernel_pairs(name):
    """(python, numba) implementations of a kernel, skipping numba if absent."""
    py = getattr(kernels, f"_{name}_py")
    nb = getattr(kernels, f"_{name}_nb")
    params = [pytest.param(py, id="python")]
    params.append(pytest.param(nb, id="numba", marks=pytest.mark.skipif(nb is None, reason="numba missing")))
    return params


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n].line())
