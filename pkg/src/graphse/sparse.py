"""CSR matrices, symbolic Cholesky analysis and level-scheduled numeric factorization.

The factorization is row-oriented ("up-looking"): row ``j`` of ``L`` only
reads rows that are descendants of ``j`` in the elimination tree, so all
rows of one etree level can be computed concurrently.  Dot products use
``math.fsum`` so results do not depend on scheduling or BLAS kernels.
"""
from __future__ import annotations

import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


class NotPositiveDefiniteError(ArithmeticError):
    def __init__(self, column: int, pivot: float):
        self.column = column
        self.pivot = pivot
        super().__init__(f"non-positive pivot {float(pivot)!r} at column {column}")


class PatternError(ValueError):
    pass


@dataclass
class CsrMatrix:
    dim: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.check()

    def check(self):
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.dim + 1,) or rp[0] != 0:
            raise PatternError("row_ptr must have dim+1 entries starting at 0")
        if np.any(np.diff(rp) < 0):
            raise PatternError("row_ptr must be nondecreasing")
        if rp[-1] != ci.size or ci.size != self.values.size:
            raise PatternError("row_ptr[dim] must equal nnz")
        if ci.size and (ci.min() < 0 or ci.max() >= self.dim):
            raise PatternError("column index out of range")
        step = np.diff(ci)
        row_start = np.zeros(ci.size, bool)
        row_start[rp[:-1][rp[:-1] < ci.size]] = True
        if np.any((step <= 0) & ~row_start[1:]):
            raise PatternError("column indices must be strictly increasing within a row")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[a:b], self.values[a:b]

    @classmethod
    def from_rows(cls, rows) -> CsrMatrix:
        """Build from a list of ``(cols, values)`` per row, columns sorted."""
        counts = [len(c) for c, _ in rows]
        row_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        cols = np.concatenate([np.asarray(c, np.int64) for c, _ in rows]) if rows else []
        vals = np.concatenate([np.asarray(v, float) for _, v in rows]) if rows else []
        return cls(len(rows), row_ptr, cols, vals)

    @classmethod
    def from_dense(cls, a: np.ndarray, keep_zeros: bool = False) -> CsrMatrix:
        a = np.asarray(a, dtype=float)
        rows = []
        for r in a:
            cols = np.arange(a.shape[1]) if keep_zeros else np.flatnonzero(r)
            rows.append((cols, r[cols]))
        return cls.from_rows(rows)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        rows = np.repeat(np.arange(self.dim), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    def transpose(self) -> CsrMatrix:
        rows = np.repeat(np.arange(self.dim), np.diff(self.row_ptr))
        order = np.lexsort((rows, self.col_idx))
        counts = np.bincount(self.col_idx, minlength=self.dim)
        row_ptr = np.concatenate(([0], np.cumsum(counts)))
        return CsrMatrix(self.dim, row_ptr, rows[order], self.values[order])

    def lower(self) -> CsrMatrix:
        rows = []
        for i in range(self.dim):
            c, v = self.row(i)
            keep = c <= i
            rows.append((c[keep], v[keep]))
        return CsrMatrix.from_rows(rows)


def spmv(a: CsrMatrix, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (a.dim,):
        raise ValueError(f"vector length {v.shape} does not match dimension {a.dim}")
    out = np.zeros(a.dim)
    for i in range(a.dim):
        c, x = a.row(i)
        out[i] = math.fsum(x * v[c])
    return out


def permute_symmetric(a: CsrMatrix, perm) -> CsrMatrix:
    """``P A P^T`` where row ``k`` of the result is row ``perm[k]`` of ``a``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    rows = []
    for k in range(a.dim):
        c, v = a.row(int(perm[k]))
        nc = inv[c]
        o = np.argsort(nc)
        rows.append((nc[o], v[o]))
    return CsrMatrix.from_rows(rows)


def minimum_degree_order(a: CsrMatrix) -> np.ndarray:
    """Greedy minimum-degree elimination order on the explicit elimination graph.

    Ties go to the lowest index, so the order is deterministic.  Quadratic
    in the worst case; intended for the small systems handled here.
    """
    adj = []
    for i in range(a.dim):
        c, _ = a.row(i)
        adj.append(set(int(k) for k in c if k != i))
    alive = set(range(a.dim))
    order = []
    while alive:
        j = min(alive, key=lambda k: (len(adj[k]), k))
        nbrs = adj[j]
        for u in nbrs:
            adj[u].discard(j)
            adj[u].update(nbrs - {u})
        alive.discard(j)
        adj[j] = set()
        order.append(j)
    return np.array(order, dtype=np.int64)


@dataclass
class SymbolicFactor:
    pattern: CsrMatrix
    etree_parent: np.ndarray
    levels: list[np.ndarray]
    perm: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.pattern.dim

    def level_of(self) -> np.ndarray:
        out = np.empty(self.dim, dtype=np.int64)
        for k, cols in enumerate(self.levels):
            out[cols] = k
        return out

    def stats(self) -> dict:
        widths = [len(lv) for lv in self.levels]
        return {
            "dim": self.dim,
            "nnz_L": self.pattern.nnz,
            "levels": len(widths),
            "max_level_width": max(widths, default=0),
        }


def _check_structure(a: CsrMatrix):
    for i in range(a.dim):
        c, _ = a.row(i)
        k = np.searchsorted(c, i)
        if k >= c.size or c[k] != i:
            raise PatternError(f"diagonal entry missing in row {i}")
    t = a.transpose()
    if not (np.array_equal(t.row_ptr, a.row_ptr) and np.array_equal(t.col_idx, a.col_idx)):
        raise PatternError("pattern is not symmetric")


def etree(a: CsrMatrix) -> np.ndarray:
    """Elimination tree by Liu's algorithm with path compression; -1 marks roots."""
    n = a.dim
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for j in range(n):
        cols, _ = a.row(j)
        for k in cols[cols < j]:
            k = int(k)
            while k != -1 and k < j:
                nxt = int(ancestor[k])
                ancestor[k] = j
                if nxt == -1:
                    parent[k] = j
                k = nxt
    return parent


def symbolic_analysis(a: CsrMatrix, perm=None) -> SymbolicFactor:
    """Fill pattern of L, elimination tree and level schedule for ``a``'s pattern."""
    if perm is not None:
        a = permute_symmetric(a, perm)
    _check_structure(a)
    n = a.dim
    parent = etree(a)

    # row j of L is the union of etree paths from each k in A[j, :j] up to j
    mark = np.full(n, -1, dtype=np.int64)
    rows = []
    for j in range(n):
        mark[j] = j
        cols, _ = a.row(j)
        reach = []
        for k in cols[cols < j]:
            k = int(k)
            while mark[k] != j:
                reach.append(k)
                mark[k] = j
                k = int(parent[k])
        reach.append(j)
        reach.sort()
        rows.append((np.array(reach, dtype=np.int64), np.zeros(len(reach))))
    pattern = CsrMatrix.from_rows(rows)

    level = np.zeros(n, dtype=np.int64)
    for j in range(n):
        p = parent[j]
        if p != -1:
            level[p] = max(level[p], level[j] + 1)
    n_levels = int(level.max()) + 1 if n else 0
    levels = [np.flatnonzero(level == k) for k in range(n_levels)]
    return SymbolicFactor(
        pattern, parent, levels, None if perm is None else np.asarray(perm, np.int64)
    )


@dataclass
class CholeskyFactor:
    L: CsrMatrix
    symbolic: SymbolicFactor
    U: CsrMatrix = field(init=False, repr=False)

    def __post_init__(self):
        self.U = self.L.transpose()

    @property
    def dim(self) -> int:
        return self.L.dim


def _factor_row(j: int, g: CsrMatrix, L: CsrMatrix, diag_pos: np.ndarray):
    lrp, lci, lv = L.row_ptr, L.col_idx, L.values
    start, stop = int(lrp[j]), int(lrp[j + 1])
    cols = lci[start:stop]
    work = np.zeros(L.dim)
    gc, gv = g.row(j)
    lower = gc <= j
    if __debug__:
        assert np.all(np.isin(gc[lower], cols)), f"row {j} of G outside symbolic pattern"
    work[gc[lower]] = gv[lower]

    for pos in range(start, stop - 1):
        k = int(lci[pos])
        ka, kd = int(lrp[k]), int(diag_pos[k])
        kc = lci[ka:kd]
        val = (work[k] - math.fsum(lv[ka:kd] * work[kc])) / lv[kd]
        work[k] = val
        lv[pos] = val
    off = lv[start:stop - 1]
    d = work[j] - math.fsum(off * off)
    if not d > 0.0:
        raise NotPositiveDefiniteError(j, d)
    lv[stop - 1] = math.sqrt(d)


def factorize(
    g: CsrMatrix,
    sym: SymbolicFactor,
    workers: int = 1,
    executor: Executor | None = None,
) -> CholeskyFactor:
    """Numeric Cholesky ``G = L L^T`` over the symbolic pattern, one etree level at a time."""
    if g.dim != sym.dim:
        raise ValueError("matrix and symbolic factor dimensions differ")
    if sym.perm is not None:
        g = permute_symmetric(g, sym.perm)
    pat = sym.pattern
    L = CsrMatrix(pat.dim, pat.row_ptr.copy(), pat.col_idx.copy(), np.zeros(pat.nnz))
    diag_pos = L.row_ptr[1:] - 1

    own_pool = None
    if executor is None and workers > 1:
        executor = own_pool = ThreadPoolExecutor(workers)
    try:
        for cols in sym.levels:
            if executor is None or len(cols) == 1:
                for j in cols:
                    _factor_row(int(j), g, L, diag_pos)
            else:
                list(executor.map(lambda j: _factor_row(int(j), g, L, diag_pos), cols))
    finally:
        if own_pool is not None:
            own_pool.shutdown()
    return CholeskyFactor(L, sym)


def solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Forward then backward substitution for ``L L^T x = b``."""
    b = np.asarray(b, dtype=float)
    n = factor.dim
    if b.shape != (n,):
        raise ValueError(f"right-hand side length {b.shape} does not match dimension {n}")
    perm = factor.symbolic.perm
    if perm is not None:
        b = b[perm]
    L, U = factor.L, factor.U
    y = np.zeros(n)
    for j in range(n):
        a, d = int(L.row_ptr[j]), int(L.row_ptr[j + 1]) - 1
        y[j] = (b[j] - math.fsum(L.values[a:d] * y[L.col_idx[a:d]])) / L.values[d]
    x = np.zeros(n)
    for j in range(n - 1, -1, -1):
        d, e = int(U.row_ptr[j]), int(U.row_ptr[j + 1])
        x[j] = (y[j] - math.fsum(U.values[d + 1:e] * x[U.col_idx[d + 1:e]])) / U.values[d]
    if perm is not None:
        out = np.empty(n)
        out[perm] = x
        return out
    return x


def write_matrix_market(a: CsrMatrix) -> str:
    """Matrix Market coordinate dump, 1-based indices, one entry per line."""
    lines = ["%%MatrixMarket matrix coordinate real general", f"{a.dim} {a.dim} {a.nnz}"]
    for i in range(a.dim):
        c, v = a.row(i)
        lines.extend(f"{i + 1} {int(k) + 1} {float(x)!r}" for k, x in zip(c, v))
    return "\n".join(lines) + "\n"


def read_matrix_market(text: str) -> CsrMatrix:
    body = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("%")]
    n_rows, n_cols, nnz = (int(t) for t in body[0].split())
    if n_rows != n_cols:
        raise ValueError("only square matrices are supported")
    entries = [ln.split() for ln in body[1:1 + nnz]]
    rows = [[] for _ in range(n_rows)]
    for r, c, v in entries:
        rows[int(r) - 1].append((int(c) - 1, float(v)))
    out = []
    for r in rows:
        r.sort()
        out.append((np.array([c for c, _ in r], np.int64), np.array([v for _, v in r])))
    return CsrMatrix.from_rows(out)
