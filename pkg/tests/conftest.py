import numpy as np
import pytest

from proxybdpt.scene import load_shipped


@pytest.fixture(scope="session")
def mirror_box():
    return load_shipped("mirror_box")


@pytest.fixture(scope="session")
def diffuse_box():
    return load_shipped("diffuse_box")


@pytest.fixture(scope="session")
def furnace():
    return load_shipped("furnace")


@pytest.fixture(scope="session")
def hallway():
    return load_shipped("hallway_mini")


def unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
