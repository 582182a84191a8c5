"""Measurement functions, synthetic measurement generation and residual statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin

import numpy as np

from .case_io import LocationError, MeasKind, Measurement, MeasurementSet, NetworkCase
from .engine import BspEngine, VertexStage
from .network import PowerGraph

V, PI, QI, PF, QF = range(5)
KIND_CODE = {
    MeasKind.voltage: V,
    MeasKind.p_injection: PI,
    MeasKind.q_injection: QI,
    MeasKind.p_flow: PF,
    MeasKind.q_flow: QF,
}
CODE_KIND = {code: kind for kind, code in KIND_CODE.items()}
P_SIDE = (PI, PF)
Q_SIDE = (V, QI, QF)


@dataclass
class SystemState:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.v.shape != self.theta.shape:
            raise ValueError("v and theta must have the same length")

    def copy(self) -> SystemState:
        return SystemState(self.v.copy(), self.theta.copy())


@dataclass(frozen=True)
class NoiseSigmas:
    """Standard deviations (p.u.) per measurement class."""

    voltage: float = 0.004
    injection: float = 0.01
    flow: float = 0.008

    def for_code(self, code: int) -> float:
        if code == V:
            return self.voltage
        return self.injection if code in (PI, QI) else self.flow


SIGMA2_FLOOR = 1e-8


@dataclass
class MeasurementModel:
    """A measurement set bound to a graph, reordered into per-vertex blocks.

    Block ``i`` is ``z[offsets[i]:offsets[i + 1]]``: V_i, P_i, Q_i, then the
    flows leaving vertex ``i`` sorted by neighbour index and edge index.
    ``order[k]`` is the position of row ``k`` in the original set.
    """

    kind: np.ndarray
    bus: np.ndarray
    edge: np.ndarray
    z: np.ndarray
    sigma2: np.ndarray
    offsets: np.ndarray
    order: np.ndarray
    source: tuple[Measurement, ...] = field(repr=False, default=())

    def __len__(self) -> int:
        return len(self.z)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma2

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def partition(self) -> list[np.ndarray]:
        return [np.arange(self.offsets[i], self.offsets[i + 1]) for i in range(len(self.offsets) - 1)]


def _resolve(graph: PowerGraph, m: Measurement) -> tuple[int, int, int]:
    """(vertex, edge or -1, neighbour or -1) for one measurement."""
    try:
        a = graph.index_of(m.location[0])
        if not m.kind.is_flow:
            return a, -1, -1
        b = graph.index_of(m.location[1])
    except KeyError as exc:
        raise LocationError(f"unknown bus {exc.args[0]} in {m.location_text}", m.line) from None
    circuits = graph.circuits(a, b)
    ckt = m.location[2]
    if ckt > len(circuits):
        raise LocationError(f"no branch {m.location_text} in network", m.line)
    return a, circuits[ckt - 1], b


def bind(graph: PowerGraph, mset: MeasurementSet) -> MeasurementModel:
    keys = []
    for pos, m in enumerate(mset):
        vertex, edge, nbr = _resolve(graph, m)
        code = KIND_CODE[m.kind]
        rank = code if code <= QI else 3
        keys.append((vertex, rank, nbr, edge, code, pos))
    keys.sort()
    order = np.array([k[5] for k in keys], dtype=np.int64)
    src = [mset.measurements[p] for p in order]
    bus = np.array([k[0] for k in keys], dtype=np.int64)
    offsets = np.searchsorted(bus, np.arange(graph.n + 1))
    return MeasurementModel(
        kind=np.array([k[4] for k in keys], dtype=np.int64),
        bus=bus,
        edge=np.array([k[3] for k in keys], dtype=np.int64),
        z=np.array([m.value for m in src], dtype=float),
        sigma2=np.array([m.sigma2 for m in src], dtype=float),
        offsets=offsets.astype(np.int64),
        order=order,
        source=tuple(src),
    )


def flat_state(graph: PowerGraph) -> SystemState:
    return SystemState(np.ones(graph.n), np.zeros(graph.n))


def truth_state(case: NetworkCase) -> SystemState:
    """Case truth values, angles re-referenced so the slack angle is zero."""
    v = np.array([b.v_true for b in case.buses])
    theta = np.array([b.theta_true for b in case.buses])
    return SystemState(v, theta - case.slack.theta_true)


def _block_values(graph: PowerGraph, model: MeasurementModel, state: SystemState, i: int) -> np.ndarray:
    v, th = state.v, state.theta
    vi, ti = v[i], th[i]
    attr = graph.vertices[i]
    p_inj = vi * vi * attr.G_ii
    q_inj = -vi * vi * attr.B_ii
    flows = {}
    for j, e in graph.adjacency[i]:
        _, gs, bs, G, B = graph.edges[e].end(i)
        c, s = cos(ti - th[j]), sin(ti - th[j])
        vv = vi * v[j]
        a = G * c + B * s
        b = G * s - B * c
        p_inj += vv * a
        q_inj += vv * b
        flows[e] = (vi * vi * gs + vv * a, -vi * vi * bs + vv * b)

    sl = model.block(i)
    out = np.empty(sl.stop - sl.start)
    for k, (code, e) in enumerate(zip(model.kind[sl], model.edge[sl])):
        if code == V:
            out[k] = vi
        elif code == PI:
            out[k] = p_inj
        elif code == QI:
            out[k] = q_inj
        else:
            out[k] = flows[int(e)][0 if code == PF else 1]
    return out


def evaluate_h(
    graph: PowerGraph,
    state: SystemState,
    model: MeasurementModel,
    engine: BspEngine | None = None,
) -> np.ndarray:
    """Expected measurement values at ``state``, in the model's row order."""
    stage = VertexStage("evaluate_h", lambda i, g, _: _block_values(g, model, state, i))
    if engine is None:
        with BspEngine(graph) as eng:
            blocks = eng.run(stage)
    else:
        blocks = engine.run(stage)
    return np.concatenate(blocks) if blocks else np.empty(0)


def full_measurement_set(graph: PowerGraph, values=None, sigma2=None) -> MeasurementSet:
    """Every V, P/Q injection and P/Q flow (both ends), in block order."""
    meas = []
    for i in range(graph.n):
        bid = graph.bus_ids[i]
        for kind in (MeasKind.voltage, MeasKind.p_injection, MeasKind.q_injection):
            meas.append((kind, (bid,)))
        for j, e in graph.adjacency[i]:
            ckt = graph.circuits(i, j).index(e) + 1
            loc = (bid, graph.bus_ids[j], ckt)
            meas.append((MeasKind.p_flow, loc))
            meas.append((MeasKind.q_flow, loc))
    if values is None:
        values = np.zeros(len(meas))
    if sigma2 is None:
        sigma2 = np.ones(len(meas))
    return MeasurementSet(
        tuple(
            Measurement(kind, loc, float(val), float(s2))
            for (kind, loc), val, s2 in zip(meas, values, sigma2)
        )
    )


def generate_measurements(
    graph: PowerGraph,
    truth: SystemState,
    noise: NoiseSigmas = NoiseSigmas(),
    seed: int = 0,
) -> MeasurementSet:
    template = full_measurement_set(graph)
    model = bind(graph, template)
    h_true = evaluate_h(graph, truth, model)
    sigma = np.array([noise.for_code(int(c)) for c in model.kind])
    if np.any(sigma < 0):
        raise ValueError("noise sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal(len(h_true))
    values = np.where(sigma > 0, h_true + sigma * draws, h_true)
    sigma2 = np.maximum(sigma * sigma, SIGMA2_FLOOR)
    out_v, out_s2 = np.empty_like(values), np.empty_like(sigma2)
    out_v[model.order], out_s2[model.order] = values, sigma2
    return full_measurement_set(graph, out_v, out_s2)


def residuals(model: MeasurementModel, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != model.z.shape:
        raise ValueError(f"expected {model.z.shape[0]} values, got {h.shape}")
    return model.z - h


def objective(r: np.ndarray, sigma2: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.sum(r * r / np.asarray(sigma2, dtype=float)))


def mean_squared_error(r: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        raise ValueError("mean squared error of an empty vector")
    return float(np.mean(r * r))
