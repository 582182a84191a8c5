"""Attributed power-system graph: buses as vertices, branches as edges."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case_io import NetworkCase, RawBranch


class SingularBranchError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeAttr:
    """Branch pi-model in Y-bus form.

    ``(g_ff, b_ff)`` and ``(g_tt, b_tt)`` are the self terms the branch adds
    at its from and to ends; ``(G_ft, B_ft)``/``(G_tf, B_tf)`` are its
    off-diagonal Y-bus contributions.
    """

    from_idx: int
    to_idx: int
    g_ij: float
    b_ij: float
    b_sh: float
    tap: float
    G_ft: float
    B_ft: float
    G_tf: float
    B_tf: float
    g_ff: float
    b_ff: float
    g_tt: float
    b_tt: float

    def end(self, i: int) -> tuple[int, float, float, float, float]:
        """(other vertex, self g, self b, mutual G, mutual B) seen from vertex ``i``."""
        if i == self.from_idx:
            return self.to_idx, self.g_ff, self.b_ff, self.G_ft, self.B_ft
        return self.from_idx, self.g_tt, self.b_tt, self.G_tf, self.B_tf


@dataclass(frozen=True)
class VertexAttr:
    G_ii: float
    B_ii: float
    gs: float
    bs: float


@dataclass(frozen=True)
class PowerGraph:
    bus_ids: tuple[int, ...]
    vertices: tuple[VertexAttr, ...]
    edges: tuple[EdgeAttr, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    slack_index: int
    base_mva: float = 100.0

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return len(self.edges)

    def index_of(self, bus_id: int) -> int:
        return self._index[bus_id]

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def circuits(self, a: int, b: int) -> tuple[int, ...]:
        """Edge indices joining vertices ``a`` and ``b``, in case-file order."""
        return self._circuits.get((min(a, b), max(a, b)), ())

    def __post_init__(self):
        index = {bid: k for k, bid in enumerate(self.bus_ids)}
        neighbors = tuple(
            tuple(sorted({j for j, _ in adj})) for adj in self.adjacency
        )
        circuits: dict[tuple[int, int], list[int]] = {}
        for e, edge in enumerate(self.edges):
            key = (min(edge.from_idx, edge.to_idx), max(edge.from_idx, edge.to_idx))
            circuits.setdefault(key, []).append(e)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_neighbors", neighbors)
        object.__setattr__(
            self, "_circuits", {k: tuple(v) for k, v in circuits.items()}
        )


def branch_pi_model(branch: RawBranch, from_idx: int = 0, to_idx: int = 1) -> EdgeAttr:
    if branch.r == 0.0 and branch.x == 0.0:
        raise SingularBranchError(
            f"branch {branch.from_bus}-{branch.to_bus} has zero impedance"
        )
    y = 1.0 / complex(branch.r, branch.x)
    b_sh = branch.b_charging / 2.0
    tap = branch.tap
    y_self = y + 1j * b_sh
    y_ff = y_self / (tap * tap)
    y_ft = -y / tap
    return EdgeAttr(
        from_idx=from_idx,
        to_idx=to_idx,
        g_ij=y.real,
        b_ij=y.imag,
        b_sh=b_sh,
        tap=tap,
        G_ft=y_ft.real,
        B_ft=y_ft.imag,
        G_tf=y_ft.real,
        B_tf=y_ft.imag,
        g_ff=y_ff.real,
        b_ff=y_ff.imag,
        g_tt=y_self.real,
        b_tt=y_self.imag,
    )


def build_graph(case: NetworkCase) -> PowerGraph:
    bus_ids = tuple(b.id for b in case.buses)
    index = {bid: k for k, bid in enumerate(bus_ids)}
    edges = tuple(
        branch_pi_model(br, index[br.from_bus], index[br.to_bus]) for br in case.branches
    )

    adjacency: list[list[tuple[int, int]]] = [[] for _ in bus_ids]
    G = [b.gs for b in case.buses]
    B = [b.bs for b in case.buses]
    for e, edge in enumerate(edges):
        adjacency[edge.from_idx].append((edge.to_idx, e))
        adjacency[edge.to_idx].append((edge.from_idx, e))
        G[edge.from_idx] += edge.g_ff
        B[edge.from_idx] += edge.b_ff
        G[edge.to_idx] += edge.g_tt
        B[edge.to_idx] += edge.b_tt

    vertices = tuple(
        VertexAttr(G[k], B[k], b.gs, b.bs) for k, b in enumerate(case.buses)
    )
    slack = next(k for k, b in enumerate(case.buses) if b.bus_type == "slack")
    return PowerGraph(
        bus_ids=bus_ids,
        vertices=vertices,
        edges=edges,
        adjacency=tuple(tuple(sorted(adj)) for adj in adjacency),
        slack_index=slack,
        base_mva=case.base_mva,
    )


def lossless_graph(graph: PowerGraph) -> PowerGraph:
    """Copy of ``graph`` with every branch's series resistance removed.

    Charging, taps and bus shunts are kept.  Purely resistive branches keep
    their admittance.
    """
    edges = []
    for e in graph.edges:
        mag2 = e.g_ij * e.g_ij + e.b_ij * e.b_ij
        if e.g_ij == 0.0 or e.b_ij == 0.0:
            edges.append(e)
            continue
        x = -e.b_ij / mag2
        raw = RawBranch(0, 0, 0.0, x, 2.0 * e.b_sh, e.tap)
        edges.append(branch_pi_model(raw, e.from_idx, e.to_idx))
    G = [v.gs for v in graph.vertices]
    B = [v.bs for v in graph.vertices]
    for e in edges:
        G[e.from_idx] += e.g_ff
        B[e.from_idx] += e.b_ff
        G[e.to_idx] += e.g_tt
        B[e.to_idx] += e.b_tt
    vertices = tuple(
        VertexAttr(G[k], B[k], v.gs, v.bs) for k, v in enumerate(graph.vertices)
    )
    return PowerGraph(
        graph.bus_ids, vertices, tuple(edges), graph.adjacency, graph.slack_index, graph.base_mva
    )


def neighbors_within(graph: PowerGraph, i: int, k: int) -> tuple[int, ...]:
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    near = set(graph.neighbors(i))
    if k == 2:
        for j in tuple(near):
            near.update(graph.neighbors(j))
    near.discard(i)
    return tuple(sorted(near))


def ybus_dense(graph: PowerGraph) -> np.ndarray:
    """Dense complex Y-bus from the stored vertex and edge attributes."""
    Y = np.zeros((graph.n, graph.n), dtype=complex)
    for k, v in enumerate(graph.vertices):
        Y[k, k] = complex(v.G_ii, v.B_ii)
    for e in graph.edges:
        Y[e.from_idx, e.to_idx] += complex(e.G_ft, e.B_ft)
        Y[e.to_idx, e.from_idx] += complex(e.G_tf, e.B_tf)
    return Y
