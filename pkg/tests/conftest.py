import time

import numpy as np
import pytest

from attainment import gp
from attainment.core import DomainBounds
from attainment.simulator import reference_plan, sample_dataset

REFERENCE_SEED = 7


class HalfSpaceModel:
    """Stub success model: mean 1 where kp <= cut, else 0."""

    def __init__(self, cut=0.8, dim=2, value=1.0):
        self.cut, self.dim, self.value = cut, dim, value
        self.bounds_ = DomainBounds()

    def predict(self, X):
        X = np.atleast_2d(X)
        return np.where(X[:, self.dim] <= self.cut, self.value, 0.0)


class ConstantModel:
    def __init__(self, value):
        self.value = value
        self.bounds_ = DomainBounds()

    def predict(self, X):
        return np.full(len(np.atleast_2d(X)), float(self.value))


@pytest.fixture(scope="session")
def reference_records():
    return sample_dataset(reference_plan(), seeds=(REFERENCE_SEED,))


@pytest.fixture(scope="session")
def reference_fit(reference_records):
    """Reference model and its wall-clock fit time in seconds."""
    start = time.perf_counter()
    model = gp.fit(reference_records)
    return model, time.perf_counter() - start


@pytest.fixture(scope="session")
def reference_model(reference_fit):
    return reference_fit[0]


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line, printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion, passed, detail):
        lines.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def half_space():
    return HalfSpaceModel()


@pytest.fixture
def constant_model():
    return ConstantModel
