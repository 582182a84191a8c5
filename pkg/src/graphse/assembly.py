"""Per-vertex Jacobian and gain blocks and their aggregation into global systems.

Column spaces.  A local block's ``col_map`` holds *extended* indices that
still include the slack angle; an ``index_map`` array turns an extended index
into a row of the reduced system (``-1`` drops it).

* full mode:   extended index ``b`` is theta_b, ``n + b`` is V_b
* decoupled:   the P side indexes angles by bus, the Q side magnitudes by bus
"""
from __future__ import annotations

from dataclasses import dataclass
from math import cos, sin

import numpy as np

from .engine import Accumulator, BspEngine, VertexStage, accumulate_rows
from .measurement import P_SIDE, PF, PI, Q_SIDE, QI, V, MeasurementModel, SystemState, flat_state
from .network import PowerGraph
from .sparse import CsrMatrix


@dataclass(frozen=True)
class LocalH:
    vertex: int
    rows: np.ndarray
    col_map: np.ndarray
    block: np.ndarray


@dataclass(frozen=True)
class LocalGain:
    vertex: int
    col_map: np.ndarray
    block: np.ndarray


@dataclass(frozen=True)
class DecoupledPair:
    p: LocalH
    q: LocalH


def full_index_map(graph: PowerGraph) -> np.ndarray:
    """Extended (theta, V) index -> state index; the slack angle is dropped."""
    n, s = graph.n, graph.slack_index
    out = np.empty(2 * n, dtype=np.int64)
    out[:n] = np.arange(n) - (np.arange(n) > s)
    out[s] = -1
    out[n:] = np.arange(n) + n - 1
    return out


def angle_index_map(graph: PowerGraph, drop_slack: bool = True) -> np.ndarray:
    out = np.arange(graph.n, dtype=np.int64)
    if drop_slack:
        s = graph.slack_index
        out = out - (out > s)
        out[s] = -1
    return out


def magnitude_index_map(graph: PowerGraph) -> np.ndarray:
    return np.arange(graph.n, dtype=np.int64)


def local_nodes(graph: PowerGraph, i: int) -> tuple[int, ...]:
    return tuple(sorted((i,) + graph.neighbors(i)))


def local_h_full(graph: PowerGraph, model: MeasurementModel, state: SystemState, i: int) -> LocalH:
    """Analytic d(z_i)/d(theta, V) over vertex ``i`` and its 1-step neighbours."""
    nodes = local_nodes(graph, i)
    pos = {b: k for k, b in enumerate(nodes)}
    k = len(nodes)
    v, th = state.v, state.theta
    vi, ti, ii = v[i], th[i], pos[i]
    attr = graph.vertices[i]

    dp = np.zeros(2 * k)
    dq = np.zeros(2 * k)
    dp[k + ii] = 2.0 * vi * attr.G_ii
    dq[k + ii] = -2.0 * vi * attr.B_ii
    flows = {}
    for j, e in graph.adjacency[i]:
        _, gs, bs, G, B = graph.edges[e].end(i)
        jj, vj = pos[j], v[j]
        c, s = cos(ti - th[j]), sin(ti - th[j])
        vv = vi * vj
        a = G * c + B * s
        b = G * s - B * c

        dp[ii] -= vv * b
        dp[jj] += vv * b
        dp[k + ii] += vj * a
        dp[k + jj] += vi * a
        dq[ii] += vv * a
        dq[jj] -= vv * a
        dq[k + ii] += vj * b
        dq[k + jj] += vi * b

        pf = np.zeros(2 * k)
        pf[ii], pf[jj] = -vv * b, vv * b
        pf[k + ii], pf[k + jj] = 2.0 * vi * gs + vj * a, vi * a
        qf = np.zeros(2 * k)
        qf[ii], qf[jj] = vv * a, -vv * a
        qf[k + ii], qf[k + jj] = -2.0 * vi * bs + vj * b, vi * b
        flows[e] = (pf, qf)

    sl = model.block(i)
    block = np.zeros((sl.stop - sl.start, 2 * k))
    for r, (code, e) in enumerate(zip(model.kind[sl], model.edge[sl])):
        if code == V:
            block[r, k + ii] = 1.0
        elif code == PI:
            block[r] = dp
        elif code == QI:
            block[r] = dq
        else:
            block[r] = flows[int(e)][0 if code == PF else 1]
    col_map = np.array(nodes + tuple(graph.n + b for b in nodes), dtype=np.int64)
    return LocalH(i, np.arange(sl.start, sl.stop), col_map, block)


def local_h_decoupled(
    graph: PowerGraph, model: MeasurementModel, i: int, p_graph: PowerGraph | None = None
) -> DecoupledPair:
    """Constant P-theta and Q-V blocks sliced from the flat-start Jacobian.

    The P-theta block is taken from ``p_graph`` when given (the estimator
    passes the resistance-free network there); otherwise both blocks are
    exact flat-start derivatives of ``graph``.
    """
    flat = flat_state(graph)
    full = local_h_full(graph, model, flat, i)
    p_full = full if p_graph is None else local_h_full(p_graph, model, flat, i)
    k = len(full.col_map) // 2
    nodes = full.col_map[:k]
    kinds = model.kind[full.rows]
    p_rows = np.isin(kinds, P_SIDE)
    q_rows = np.isin(kinds, Q_SIDE)
    p = LocalH(i, full.rows[p_rows], nodes, p_full.block[p_rows][:, :k])
    q = LocalH(i, full.rows[q_rows], nodes.copy(), full.block[q_rows][:, k:])
    return DecoupledPair(p, q)


def local_gain(h: LocalH, weights: np.ndarray) -> LocalGain:
    """``H^T diag(w) H`` over the block's columns; ``weights`` is per block row."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (h.block.shape[0],):
        raise ValueError("one weight per block row expected")
    g = h.block.T @ (w[:, None] * h.block)
    return LocalGain(h.vertex, h.col_map, 0.5 * (g + g.T))


def _gain_accumulators(gain: LocalGain, index_map: np.ndarray) -> list[Accumulator]:
    target = index_map[gain.col_map]
    keep = target >= 0
    cols = target[keep]
    sub = gain.block[np.ix_(keep, keep)]
    return [
        Accumulator(int(row), cols, sub[a], gain.vertex) for a, row in enumerate(cols)
    ]


def assemble_gain(local_gains, index_map: np.ndarray) -> CsrMatrix:
    """Sum row slices of every local gain block into a CSR system matrix.

    The structural pattern of every block is kept, zeros included, so the
    pattern depends on topology and measurement placement only.  Every
    diagonal entry is stored, so a state no measurement touches shows up as
    a zero pivot in the factorization rather than as a malformed pattern.
    """
    dim = int(index_map.max()) + 1
    contributions = [Accumulator(k, [k], [0.0], -1) for k in range(dim)]
    contributions += [acc for g in local_gains for acc in _gain_accumulators(g, index_map)]
    return CsrMatrix.from_rows(accumulate_rows(contributions, dim))


def local_rhs(h: LocalH, weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``H_i^T R_i^-1 r_i`` over the block's columns."""
    return h.block.T @ (weights[h.rows] * r[h.rows])


def build_rhs(
    local_hs,
    weights: np.ndarray,
    r: np.ndarray,
    index_map: np.ndarray,
    engine: BspEngine | None = None,
) -> np.ndarray:
    """Scatter-add every vertex's ``H_i^T R_i^-1 r_i`` into the reduced state space."""
    weights = np.asarray(weights, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.shape != weights.shape:
        raise ValueError("residual and weight vectors differ in length")
    local_hs = list(local_hs)
    if engine is None:
        parts = [local_rhs(h, weights, r) for h in local_hs]
    else:
        stage = VertexStage("rhs", lambda i, g, _: local_rhs(local_hs[i], weights, r))
        parts = engine.run(stage)
    dim = int(index_map.max()) + 1
    out = np.zeros(dim)
    if not local_hs:
        return out
    target = np.concatenate([index_map[h.col_map] for h in local_hs])
    vals = np.concatenate(parts)
    keep = target >= 0
    np.add.at(out, target[keep], vals[keep])
    return out


def stacked_jacobian(local_hs, n_rows: int, ext_dim: int) -> np.ndarray:
    """Dense global H in extended columns from local blocks (diagnostics and tests)."""
    H = np.zeros((n_rows, ext_dim))
    for h in local_hs:
        H[np.ix_(h.rows, h.col_map)] = h.block
    return H


def local_jacobians(graph, model, state, engine: BspEngine) -> list[LocalH]:
    stage = VertexStage("local_h", lambda i, g, _: local_h_full(g, model, state, i))
    return engine.run(stage)


def local_gains(local_hs, weights: np.ndarray, engine: BspEngine) -> list[LocalGain]:
    stage = VertexStage("local_gain", lambda i, g, _: local_gain(local_hs[i], weights[local_hs[i].rows]))
    return engine.run(stage)
