"""Discrete truss problem in standard conic form.

Variables are stored blockwise, ``x = [t, Pi, pi]`` with one entry per pair in
each block, and every triple ``(t_e, Pi_e, pi_e)`` lies in the rotated cone
``pi_e^2 <= 2 t_e Pi_e``. Minimizing ``sum l_e (t_e + Pi_e)`` therefore
minimizes ``sum l_e (1 + alpha_e^2 / 2) Pi_e`` with ``alpha_e = pi_e / Pi_e``.

Rows:
  * transverse, one per non-Dirichlet node z:  sum_e s(e, z) pi_e = f_h(z),
    with s = +1 at the head j and -1 at the tail i of e = (i, j);
  * in-plane, two per interior node z:  sum_e s(e, z) Pi_e tau_e = 0.

With these signs the equality multipliers are exactly (u, w) and the conic
dual constraint of pair e reads 1/2 (u_j - u_i)^2 + <w_j - w_i, x_j - x_i> <= l_e^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DiscreteLoad, Grid, PairSet

TRANSVERSE, IN_PLANE = 0, 1


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class DualAssignment:
    u: np.ndarray  # (n,)
    w: np.ndarray  # (n, 2)

    @classmethod
    def zeros(cls, n: int) -> "DualAssignment":
        return cls(np.zeros(n), np.zeros((n, 2)))

    def scaled(self, s: float) -> "DualAssignment":
        """(s u, s^2 w): the two-point expression scales by s^2."""
        return DualAssignment(s * self.u, s * s * self.w)


@dataclass(frozen=True)
class ConicProgram:
    grid: Grid
    pairs: PairSet
    load: DiscreteLoad
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    row_kind: np.ndarray
    row_node: np.ndarray
    row_axis: np.ndarray  # -1 on transverse rows

    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def n_vars(self) -> int:
        return 3 * self.m

    def split(self, x: np.ndarray):
        m = self.m
        return x[:m], x[m:2 * m], x[2 * m:]

    def dual_from_rows(self, y: np.ndarray) -> DualAssignment:
        n = self.grid.n
        u = np.zeros(n)
        w = np.zeros((n, 2))
        tr = self.row_kind == TRANSVERSE
        u[self.row_node[tr]] = y[tr]
        ip = ~tr
        w[self.row_node[ip], self.row_axis[ip]] = y[ip]
        return DualAssignment(u, w)

    def rows_from_dual(self, d: DualAssignment) -> np.ndarray:
        y = np.empty(len(self.b))
        tr = self.row_kind == TRANSVERSE
        y[tr] = d.u[self.row_node[tr]]
        y[~tr] = d.w[self.row_node[~tr], self.row_axis[~tr]]
        return y

    def primal_objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def dual_objective(self, d: DualAssignment) -> float:
        return float(self.load.weights @ d.u)


def assemble(grid: Grid, pairs: PairSet, load: DiscreteLoad) -> ConicProgram:
    if len(pairs) == 0:
        raise AssemblyError("empty pair set")
    if len(load.weights) != grid.n:
        raise AssemblyError("load is not defined on this grid")
    if np.any(load.weights[grid.dirichlet_mask] != 0):
        raise AssemblyError("load on Dirichlet node")
    # zero dual is strictly feasible (residual -l_e^2 < 0): strong duality
    if not np.all(pairs.lengths > 0):
        raise AssemblyError("degenerate pair")
    n, m = grid.n, len(pairs)

    free = np.flatnonzero(grid.free)
    inner = np.flatnonzero(grid.interior)
    trow = np.full(n, -1)
    trow[free] = np.arange(len(free))
    base = len(free)
    irow = np.full(n, -1)
    irow[inner] = base + 2 * np.arange(len(inner))
    n_rows = base + 2 * len(inner)

    rows, cols, vals = [], [], []
    e = np.arange(m)
    for end, sign in ((pairs.j, 1.0), (pairs.i, -1.0)):
        r = trow[end]
        ok = r >= 0
        rows.append(r[ok]); cols.append(2 * m + e[ok]); vals.append(np.full(ok.sum(), sign))
        r = irow[end]
        ok = r >= 0
        for axis in (0, 1):
            rows.append(r[ok] + axis); cols.append(m + e[ok]); vals.append(sign * pairs.directions[ok, axis])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_rows, 3 * m))
    A.sum_duplicates()
    b = np.zeros(n_rows)
    b[:base] = load.weights[free]
    c = np.concatenate([pairs.lengths, pairs.lengths, np.zeros(m)])
    row_kind = np.concatenate([np.full(base, TRANSVERSE), np.full(2 * len(inner), IN_PLANE)])
    row_node = np.concatenate([free, np.repeat(inner, 2)])
    row_axis = np.concatenate([np.full(base, -1), np.tile([0, 1], len(inner))])
    for arr in (c, b, row_kind, row_node, row_axis):
        arr.setflags(write=False)
    return ConicProgram(grid, pairs, load, c, A, b, row_kind, row_node, row_axis)


def two_point_residual(d: DualAssignment, grid: Grid, pairs: PairSet) -> np.ndarray:
    """1/2 (u_j - u_i)^2 + <w_j - w_i, x_j - x_i> - l_e^2; feasible where <= 0."""
    du = d.u[pairs.j] - d.u[pairs.i]
    dw = d.w[pairs.j] - d.w[pairs.i]
    dx = grid.nodes[pairs.j] - grid.nodes[pairs.i]
    return 0.5 * du * du + np.einsum("ij,ij->i", dw, dx) - pairs.lengths**2


def monotonicity_gap(d: DualAssignment, grid: Grid, pairs: PairSet) -> np.ndarray:
    """<(x - w_x) - (y - w_y), x - y> - 1/2 (u_y - u_x)^2 per pair; >= 0 for feasible (u, w)."""
    dx = grid.nodes[pairs.j] - grid.nodes[pairs.i]
    dv = dx - (d.w[pairs.j] - d.w[pairs.i])
    du = d.u[pairs.j] - d.u[pairs.i]
    return np.einsum("ij,ij->i", dv, dx) - 0.5 * du * du


def dump_program(prog: ConicProgram) -> str:
    """Plain-text dump: header, cone layout, cost, rhs and the triplets of A."""
    A = prog.A.tocoo()
    m = prog.m
    out = [
        "# optimembrane conic program v1",
        f"vars {prog.n_vars} rows {A.shape[0]} nnz {A.nnz} cones {m}",
        "# cone e: (t, Pi, pi) = columns (e, m+e, 2m+e) with pi^2 <= 2 t Pi",
    ]
    out += [f"cone {e} {prog.pairs.i[e]} {prog.pairs.j[e]} {e} {m + e} {2 * m + e}" for e in range(m)]
    out += [f"c {k} {v:.17g}" for k, v in enumerate(prog.c) if v != 0]
    kinds = {TRANSVERSE: "transverse", IN_PLANE: "in_plane"}
    out += [f"b {r} {kinds[int(prog.row_kind[r])]} {prog.row_node[r]} {prog.row_axis[r]} {prog.b[r]:.17g}"
            for r in range(len(prog.b))]
    out += [f"A {r} {k} {v:.17g}" for r, k, v in zip(A.row, A.col, A.data)]
    return "\n".join(out) + "\n"
