import numpy as np
import pytest

from gridloc.case_io import Branch, Bus, RawCase, load_case
from gridloc.grid_model import model_from_case
from gridloc.scenario import enumerate_events

ACCEPTANCE_LINES: list[str] = []


def make_case(n, edges, x=None, injection=None, slack=1):
    """RawCase on buses 1..n from 1-based ``edges``."""
    x = [1.0] * len(edges) if x is None else list(x)
    injection = [0.0] * n if injection is None else list(injection)
    buses = [Bus(i + 1, "slack" if i + 1 == slack else "PQ", float(injection[i])) for i in range(n)]
    branches = [Branch(a, b, float(xx)) for (a, b), xx in zip(edges, x)]
    return RawCase(100.0, tuple(buses), tuple(branches))


def random_connected_edges(rng, n, extra_p=0.3):
    """Random spanning tree on 1..n plus a few extra edges."""
    order = rng.permutation(n) + 1
    edges = set()
    for k in range(1, n):
        a = int(order[k])
        b = int(order[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if (a, b) not in edges and rng.random() < extra_p:
                edges.add((a, b))
    return sorted(edges)


TWO_BUS_M = """function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus_i type Pd
mpc.bus = [
\t1\t3\t0;
\t2\t1\t100;
];
mpc.gen = [
\t1\t100;
];
mpc.branch = [
\t1\t2\t0\t0.5;
];
"""


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def model14(case14):
    return model_from_case(case14)


@pytest.fixture(scope="session")
def events14(model14):
    return enumerate_events(model14)


@pytest.fixture(scope="session")
def model118():
    return model_from_case(load_case("case118"))


@pytest.fixture(scope="session")
def events118(model118):
    return enumerate_events(model118)


@pytest.fixture
def triangle():
    return model_from_case(make_case(3, [(1, 2), (2, 3), (1, 3)]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
