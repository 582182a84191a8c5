import functools

import numpy as np
import pytest

from graphse import assembly
from graphse.engine import BspEngine
from graphse.fixtures import NAMES, load_case
from graphse.measurement import (
    NoiseSigmas,
    SystemState,
    bind,
    evaluate_h,
    full_measurement_set,
    generate_measurements,
    truth_state,
)
from graphse.network import build_graph

NOISELESS = NoiseSigmas(0.0, 0.0, 0.0)


@functools.lru_cache(maxsize=None)
def case_and_graph(name):
    case = load_case(name)
    return case, build_graph(case)


@functools.lru_cache(maxsize=None)
def full_model(name):
    """Unit-variance full measurement model, used for structural checks."""
    _, graph = case_and_graph(name)
    return bind(graph, full_measurement_set(graph))


@functools.lru_cache(maxsize=None)
def noiseless_set(name):
    case, graph = case_and_graph(name)
    return generate_measurements(graph, truth_state(case), NOISELESS, seed=0)


def random_state(graph, rng):
    v = rng.uniform(0.9, 1.1, graph.n)
    theta = rng.uniform(-0.3, 0.3, graph.n)
    theta[graph.slack_index] = 0.0
    return SystemState(v, theta)


def fd_jacobian(graph, model, state, step=1e-6):
    """Central finite differences of h over extended (theta, V) columns."""
    n = graph.n
    H = np.zeros((len(model), 2 * n))
    for c in range(2 * n):
        plus, minus = state.copy(), state.copy()
        vec_p = plus.theta if c < n else plus.v
        vec_m = minus.theta if c < n else minus.v
        vec_p[c % n] += step
        vec_m[c % n] -= step
        H[:, c] = (evaluate_h(graph, plus, model) - evaluate_h(graph, minus, model)) / (2 * step)
    return H


def analytic_jacobian(graph, model, state):
    with BspEngine(graph) as eng:
        hs = assembly.local_jacobians(graph, model, state, eng)
    return assembly.stacked_jacobian(hs, len(model), 2 * graph.n)


def dense_gain_oracle(local_gains, index_map):
    """Scatter every dense local gain into a dense global matrix."""
    dim = int(index_map.max()) + 1
    G = np.zeros((dim, dim))
    for g in local_gains:
        t = index_map[g.col_map]
        keep = t >= 0
        G[np.ix_(t[keep], t[keep])] += g.block[np.ix_(keep, keep)]
    return G


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(params=NAMES)
def fixture_name(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
