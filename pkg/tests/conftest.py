import dataclasses

import numpy as np
import pytest

from safedual.dynamics import scalar_drag_model, vector_drag_model


@pytest.fixture
def m1():
    return scalar_drag_model()


@pytest.fixture
def m2():
    return vector_drag_model()


def no_gravity(model):
    return dataclasses.replace(model, gravity=np.zeros(3))


def state(p=(0.0, 0.0, 1.0), v=(0.0, 0.0, 0.0)):
    return np.concatenate([np.asarray(p, float), np.asarray(v, float)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
