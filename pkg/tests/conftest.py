import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from reciprocal_bp.model import HiddenReciprocalModel, random_model, uniform_model  # noqa: E402


@pytest.fixture
def uniform4():
    return uniform_model(2, 4)


@pytest.fixture
def binary5():
    return random_model(2, 5, seed=13, positivity_floor=0.05)


@pytest.fixture
def ternary6():
    return random_model(3, 6, seed=1, positivity_floor=0.1)


def with_evidence(model, k, state):
    nodes = np.array(model.node_potentials)
    nodes[k] = 0.0
    nodes[k, state] = 1.0
    return HiddenReciprocalModel(model.edge_potentials, nodes)


ACCEPTANCE_LINES = []


def acceptance_report(number, name, passed, detail):
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
