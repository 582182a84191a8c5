"""Vertex-centric bulk-synchronous execution with deterministic row accumulation.

A stage runs one kernel per vertex.  Kernels see the immutable graph and the
outputs of the *previous* superstep only; the stage returns after every
vertex has finished, which is the barrier between supersteps.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .network import PowerGraph

Kernel = Callable[[int, PowerGraph, Any], Any]


class StageError(RuntimeError):
    def __init__(self, stage: str, vertex: int, cause: BaseException):
        self.stage = stage
        self.vertex = vertex
        super().__init__(f"stage {stage!r} failed at vertex {vertex}: {cause!r}")


class SuperstepViolation(RuntimeError):
    """A kernel tried to read a peer's output from the running superstep."""


@dataclass(frozen=True)
class VertexStage:
    name: str
    kernel: Kernel


@dataclass(frozen=True)
class Accumulator:
    """Contribution of ``source`` vertex to one row of a global matrix."""

    row: int
    cols: np.ndarray
    values: np.ndarray
    source: int = 0


class BspEngine:
    """Runs vertex stages over one graph with a fixed worker count.

    Usable as a context manager; the thread pool lives as long as the engine.
    """

    def __init__(self, graph: PowerGraph, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.graph = graph
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None
        self._running: str | None = None
        self._last: tuple = ()
        self._lock = threading.Lock()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    @property
    def executor(self) -> ThreadPoolExecutor | None:
        return self._pool

    def peer(self, j: int):
        """Output of vertex ``j`` from the last *completed* superstep."""
        if self._running is not None:
            raise SuperstepViolation(
                f"vertex output {j} read during running stage {self._running!r}"
            )
        return self._last[j]

    def run(self, stage: VertexStage, prev: Sequence | None = None) -> list:
        graph = self.graph
        prev = tuple(prev) if prev is not None else None

        def one(i: int):
            try:
                return stage.kernel(i, graph, prev)
            except SuperstepViolation:
                raise
            except Exception as exc:
                raise StageError(stage.name, i, exc) from exc

        with self._lock:
            self._running = stage.name
            try:
                if self._pool is None:
                    out = [one(i) for i in range(graph.n)]
                else:
                    out = list(self._pool.map(one, range(graph.n)))
            finally:
                self._running = None
            self._last = tuple(out)
        return out


def vertex_map(
    graph: PowerGraph, stage: VertexStage, workers: int = 1, prev: Sequence | None = None
) -> list:
    with BspEngine(graph, workers) as engine:
        return engine.run(stage, prev)


def accumulate_rows(
    contributions: Sequence[Accumulator], dim: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Merge row contributions into per-row ``(cols, values)`` with sorted columns.

    Entries sharing (row, col) are added one at a time in ascending source
    order, so the floating-point result does not depend on input order.
    """
    if not contributions:
        return [(np.empty(0, np.int64), np.empty(0)) for _ in range(dim)]
    rows = np.concatenate([np.full(len(a.cols), a.row, np.int64) for a in contributions])
    srcs = np.concatenate([np.full(len(a.cols), a.source, np.int64) for a in contributions])
    cols = np.concatenate([np.asarray(a.cols, np.int64) for a in contributions])
    vals = np.concatenate([np.asarray(a.values, float) for a in contributions])
    if rows.size and (rows.min() < 0 or rows.max() >= dim or cols.min() < 0 or cols.max() >= dim):
        raise IndexError(f"accumulator index outside 0..{dim - 1}")

    order = np.lexsort((srcs, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    new = np.ones(rows.size, bool)
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    slot = np.cumsum(new) - 1
    summed = np.zeros(int(slot[-1]) + 1 if slot.size else 0)
    # ufunc.at is unbuffered: additions happen sequentially in array order.
    np.add.at(summed, slot, vals)
    urows, ucols = rows[new], cols[new]

    bounds = np.searchsorted(urows, np.arange(dim + 1))
    return [
        (ucols[bounds[r]:bounds[r + 1]], summed[bounds[r]:bounds[r + 1]]) for r in range(dim)
    ]
