import json
import os
import time

import numpy as np
import pytest

from quadprior import kernels

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []
# wall time of the session training fixtures, in seconds
FIXTURE_SECONDS = {}


def golden(name):
    return os.path.join(GOLDEN, name)


def golden_manifest():
    with open(golden("manifest.json")) as fh:
        return json.load(fh)


BACKENDS = kernels.available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.BACKEND
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def trained_toy():
    """The pinned 2000-step toy training run (a few minutes on one core)."""
    from quadprior.toymodel import TrainConfig, train_toy

    t0 = time.perf_counter()
    res = train_toy(TrainConfig())
    FIXTURE_SECONDS["trained_toy"] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def trained_bypass():
    from quadprior.bypassdec import BypassConfig, train_bypass

    t0 = time.perf_counter()
    res = train_bypass(BypassConfig())
    FIXTURE_SECONDS["trained_bypass"] = time.perf_counter() - t0
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_collection_modifyitems(items):
    for item in items:
        if {"trained_toy", "trained_bypass"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
