import numpy as np
import pytest

from distqn.graph import Topology, WeightMatrix, generate_connected_geometric, metropolis_weights
from distqn.problems import QuadraticProblem, generate_logistic, generate_quadratic


def two_node():
    """n=2, p=1: f_1 = x^2/2, f_2 = (x-3)^2, w_12 = 1/3."""
    problem = QuadraticProblem(B=[[[1.0]], [[2.0]]], a=[[0.0], [3.0]], spectra=[[1.0], [2.0]])
    weights = metropolis_weights(Topology(2, ((0, 1),)))
    return problem, weights


def single_node(B=2.0, a=3.0):
    problem = QuadraticProblem(B=[[[B]]], a=[[a]], spectra=[[B]])
    weights = WeightMatrix(Topology(1, ()), np.array([1.0]), np.zeros(0))
    return problem, weights


def instance(n=10, p=3, seed=0, kind="quadratic", tau=0.5):
    topology, _ = generate_connected_geometric(n, seed)
    weights = metropolis_weights(topology)
    if kind == "quadratic":
        problem = generate_quadratic(n, p, seed)
    else:
        problem = generate_logistic(n, 2, p, seed, tau)
    return problem, weights


@pytest.fixture
def pair():
    return two_node()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


def record_acceptance(line):
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
