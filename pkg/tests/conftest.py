import math

import numpy as np
import pytest

from eventsched.filtering import solve_dare
from eventsched.model import LtiSystem, two_process_example

# fixed point of 4P^2 - 2P - 1 = 0 for A=2, C=Q=R=1
SCALAR_PBAR = (1.0 + math.sqrt(5.0)) / 4.0

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def scalar_sys():
    return LtiSystem(A=[[2.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]])


@pytest.fixture(scope="session")
def scalar_filter(scalar_sys):
    return solve_dare(scalar_sys)


@pytest.fixture(scope="session")
def example_systems():
    return two_process_example()


@pytest.fixture(scope="session")
def example_filters(example_systems):
    return [solve_dare(s) for s in example_systems]


def random_reachable(filt, rng, depth=6):
    """A random convex combination of h^j(P_bar), j <= depth."""
    from eventsched.estimator import CovMaps

    its = CovMaps(filt).h_iterates(depth)
    w = rng.dirichlet(np.ones(depth + 1))
    return sum(wi * X for wi, X in zip(w, its))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
