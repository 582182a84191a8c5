import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphse.case_io import NetworkCase, RawBranch, RawBus, parse_case
from graphse.network import (
    SingularBranchError,
    branch_pi_model,
    build_graph,
    lossless_graph,
    neighbors_within,
    ybus_dense,
)

from conftest import case_and_graph


def ybus_oracle(case):
    """Dense Y-bus from branch data via incidence matrices, built independently."""
    n = len(case.buses)
    idx = {b.id: k for k, b in enumerate(case.buses)}
    Y = np.diag([complex(b.gs, b.bs) for b in case.buses])
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1 / complex(br.r, br.x)
        bc = 1j * br.b_charging / 2
        a = br.tap
        prim = np.array([[(ys + bc) / a**2, -ys / a], [-ys / a, ys + bc]])
        C = np.zeros((2, n))
        C[0, f] = C[1, t] = 1
        Y = Y + C.T @ prim @ C
    return Y


def test_pure_reactance():
    e = branch_pi_model(RawBranch(1, 2, 0.0, 0.1))
    assert e.g_ij == 0.0
    assert e.b_ij == pytest.approx(-10.0)


def test_complex_reciprocal():
    e = branch_pi_model(RawBranch(1, 2, 0.01, 0.1))
    assert e.g_ij == pytest.approx(0.990099, abs=1e-6)
    assert e.b_ij == pytest.approx(-9.90099, abs=1e-5)


def test_zero_impedance():
    with pytest.raises(SingularBranchError):
        branch_pi_model(RawBranch(1, 2, 0.0, 0.0))


def test_two_bus_ybus():
    _, g = case_and_graph("case2")
    B = ybus_dense(g).imag
    assert B[0, 0] == pytest.approx(-10.0)
    assert B[1, 1] == pytest.approx(-10.0)
    assert B[0, 1] == pytest.approx(10.0)
    assert B[1, 0] == pytest.approx(10.0)


def test_isolated_bus():
    case = NetworkCase(
        100.0,
        (RawBus(1, "slack", 1, 0, 0, 0), RawBus(2, "pq", 1, 0, 0, 0), RawBus(3, "pq", 1, 0, 0, 0)),
        (RawBranch(1, 2, 0.0, 0.1),),
    )
    g = build_graph(case)
    assert (g.vertices[2].G_ii, g.vertices[2].B_ii) == (0.0, 0.0)
    assert neighbors_within(g, 2, 1) == ()
    assert neighbors_within(g, 2, 2) == ()


@pytest.mark.parametrize("name", ["case2", "case5", "ieee14", "ieee118"])
def test_ybus_matches_oracle(name):
    case, g = case_and_graph(name)
    Y, ref = ybus_dense(g), ybus_oracle(case)
    assert np.max(np.abs(Y - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_five_bus_neighbourhoods():
    _, g = case_and_graph("case5")
    i = g.index_of(1)
    ids = lambda ks: {g.bus_ids[k] for k in ks}
    assert ids(neighbors_within(g, i, 1)) == {2, 3}
    assert ids(neighbors_within(g, i, 2)) == {2, 3, 4, 5}
    assert [g.degree(k) for k in range(g.n)] == [2, 4, 3, 3, 2]


def test_neighbors_within_rejects_k():
    _, g = case_and_graph("case5")
    with pytest.raises(ValueError):
        neighbors_within(g, 0, 3)


def test_parallel_circuits():
    _, g = case_and_graph("ieee118")
    pairs = {}
    for e, edge in enumerate(g.edges):
        pairs.setdefault(frozenset((edge.from_idx, edge.to_idx)), []).append(e)
    doubles = [v for v in pairs.values() if len(v) > 1]
    assert len(doubles) == 7
    a, b = g.edges[doubles[0][0]].from_idx, g.edges[doubles[0][0]].to_idx
    assert g.circuits(a, b) == tuple(doubles[0])
    assert g.neighbors(a).count(b) == 1


def test_lossless_graph_drops_resistance():
    case, g = case_and_graph("case5")
    lg = lossless_graph(g)
    for br, e, le in zip(case.branches, g.edges, lg.edges):
        assert le.g_ij == 0.0
        assert le.b_sh == e.b_sh
        assert le.b_ij == pytest.approx(-1.0 / br.x, rel=1e-12)
    assert lg.adjacency == g.adjacency


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.0, 0.2),
    st.floats(0.01, 0.5),
    st.floats(0.0, 0.5),
    st.floats(0.8, 1.2),
)
def test_pi_model_matches_oracle(r, x, b, tap):
    case = parse_case(
        f"BASE_MVA 100\nBUS\n1 slack 1 0 0 0\n2 pq 1 0 0 0\nBRANCH\n1 2 {r!r} {x!r} {b!r} {tap!r}\n"
    )
    Y = ybus_dense(build_graph(case))
    ref = ybus_oracle(case)
    assert np.max(np.abs(Y - ref)) <= 1e-12 * np.max(np.abs(ref))
