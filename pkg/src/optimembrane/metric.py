"""Pseudo-metrics induced by monotone maps on the grid.

For v = id - w the segment cost is l_v(x, y) = sqrt(2 <v(y) - v(x), y - x>).
c_v is approximated by shortest chains along a set of edges. Chains only
restrict the infimum, so the grid distance is an upper bound of the continuum
one. The boundary-relaxed transport distance lets mass appear and vanish
freely on Dirichlet nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .geometry import DiscreteLoad, Grid, PairSet, build_pairs

MONO_TOL = 1e-10


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricGraph:
    grid: Grid
    v: np.ndarray  # (n, 2)
    edges: PairSet
    costs: np.ndarray
    clamped: int = 0

    @property
    def matrix(self) -> sp.csr_matrix:
        # explicit zeros are kept as edges by csgraph
        n = self.grid.n
        return sp.csr_matrix((self.costs, (self.edges.i, self.edges.j)), shape=(n, n))


def build_metric_graph(grid: Grid, v: Optional[np.ndarray] = None, edges=None,
                       w: Optional[np.ndarray] = None) -> MetricGraph:
    """Graph with costs l_v on ``edges`` (a PairSet or a pair strategy).

    Either ``v`` or the displacement ``w`` (v = id - w) may be given; v is
    reset to the identity on boundary nodes.
    """
    if v is None:
        v = grid.nodes - (np.zeros_like(grid.nodes) if w is None else np.asarray(w, float))
    v = np.array(v, dtype=float)
    v[grid.boundary_mask] = grid.nodes[grid.boundary_mask]
    edges = build_pairs(grid, "full" if edges is None else edges) if not isinstance(edges, PairSet) else edges
    dx = grid.nodes[edges.j] - grid.nodes[edges.i]
    ip = np.einsum("ij,ij->i", v[edges.j] - v[edges.i], dx)
    L2 = edges.lengths**2
    bad = ip < -MONO_TOL * L2
    if np.any(bad):
        k = int(np.argmin(ip / L2))
        raise MetricError(f"map is not monotone on edge ({edges.i[k]}, {edges.j[k]}): "
                          f"<dv, dx> / l^2 = {ip[k] / L2[k]:.3e}")
    clamped = int(np.sum(ip < 0))
    return MetricGraph(grid, v, edges, np.sqrt(2.0 * np.maximum(ip, 0.0)), clamped)


def edge_cost_sq(grid: Grid, v: np.ndarray, edges: PairSet) -> np.ndarray:
    """l_v^2 on edges without clamping; linear in v."""
    dx = grid.nodes[edges.j] - grid.nodes[edges.i]
    return 2.0 * np.einsum("ij,ij->i", v[edges.j] - v[edges.i], dx)


def is_connected(grid: Grid, edges: PairSet) -> bool:
    m = sp.csr_matrix((np.ones(len(edges)), (edges.i, edges.j)), shape=(grid.n, grid.n))
    return connected_components(m, directed=False)[0] == 1


def _check_connected(g: MetricGraph) -> None:
    ncomp, _ = connected_components(g.matrix, directed=False)
    if ncomp != 1:
        raise MetricError(f"edge graph is disconnected ({ncomp} components)")


def c_v_distance(g: MetricGraph, source) -> np.ndarray:
    """Shortest-chain distance from ``source`` (node index or iterable of indices) to every node."""
    _check_connected(g)
    return dijkstra(g.matrix, directed=False, indices=source)


def geodesic(g: MetricGraph, a: int, b: int) -> tuple[list[int], float]:
    """Cheapest node chain from a to b and its cost."""
    dist, pred = dijkstra(g.matrix, directed=False, indices=a, return_predecessors=True)
    if not np.isfinite(dist[b]):
        raise MetricError(f"node {b} is unreachable from {a}")
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    return path[::-1], float(dist[b])


def path_cost(g: MetricGraph, path: list[int]) -> float:
    lookup = g.edges.index_map(g.grid.n)
    n = g.grid.n
    total = 0.0
    for p, q in zip(path[:-1], path[1:]):
        total += g.costs[lookup[min(p, q) * n + max(p, q)]]
    return total


# ------------------------------------------------------------ transport

def min_cost_transport(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray):
    """Balanced transportation problem by successive shortest augmenting paths.

    Dense residual graph with Johnson potentials so every Dijkstra sees
    nonnegative reduced costs. Returns (value, flow matrix).
    """
    supply = np.asarray(supply, float).copy()
    demand = np.asarray(demand, float).copy()
    cost = np.asarray(cost, float)
    a, b = cost.shape
    if abs(supply.sum() - demand.sum()) > 1e-12 * max(1.0, supply.sum()):
        raise MetricError("unbalanced transport problem")
    eps = 1e-14 * max(1.0, supply.sum())
    flow = np.zeros((a, b))
    pot = np.zeros(a + b)  # valid initially since cost >= 0
    if np.any(cost < 0):
        raise MetricError("negative transport cost")
    while supply.max(initial=0.0) > eps and demand.max(initial=0.0) > eps:
        # Dijkstra over sources 0..a-1 and sinks a..a+b-1
        dist = np.full(a + b, np.inf)
        prev = np.full(a + b, -1)
        src = supply > eps
        dist[:a][src] = 0.0
        done = np.zeros(a + b, bool)
        while True:
            cand = np.where(done, np.inf, dist)
            k = int(np.argmin(cand))
            if not np.isfinite(cand[k]):
                break
            done[k] = True
            if k < a:  # forward arcs to every sink
                red = cost[k] + pot[k] - pot[a:]
                nd = dist[k] + np.maximum(red, 0.0)
                upd = (nd < dist[a:]) & ~done[a:]
                dist[a:][upd] = nd[upd]
                prev[a:][upd] = k
            else:  # backward arcs along positive flow
                j = k - a
                back = flow[:, j] > eps
                red = -cost[:, j] + pot[k] - pot[:a]
                nd = dist[k] + np.maximum(red, 0.0)
                upd = back & (nd < dist[:a]) & ~done[:a]
                dist[:a][upd] = nd[upd]
                prev[:a][upd] = k
        sinks = np.flatnonzero(demand > eps)
        reach = sinks[np.isfinite(dist[a + sinks])]
        if len(reach) == 0:
            raise MetricError("transport problem is infeasible")
        t = int(reach[np.argmin(dist[a + reach])])
        # sources still carrying supply were seeded at distance 0 and have no predecessor
        path = []
        k = a + t
        while prev[k] >= 0:
            path.append((int(prev[k]), k))
            k = int(prev[k])
        s = k
        delta = min(supply[s], demand[t])
        for p, k in path:
            if p >= a:  # backward arc: sink p -> source k
                delta = min(delta, flow[k, p - a])
        for p, k in path:
            if p < a:
                flow[p, k - a] += delta
            else:
                flow[k, p - a] -= delta
        supply[s] -= delta
        demand[t] -= delta
        fin = np.isfinite(dist)
        pot[fin] += dist[fin]
        pot[~fin] += dist[fin].max(initial=0.0)
    return float(np.sum(flow * cost)), flow


@dataclass
class TransportResult:
    W: float
    plan: list  # (from, to, mass); -1 marks the Dirichlet reservoir
    exits: dict  # node -> nearest Dirichlet node used for reservoir moves


def kantorovich_sigma0(g: MetricGraph, mu: DiscreteLoad, nu: DiscreteLoad,
                       sigma0_nodes: Optional[np.ndarray] = None) -> TransportResult:
    """Transport mu onto nu where Dirichlet nodes may absorb or emit any mass."""
    mw, nw = np.asarray(mu.weights, float), np.asarray(nu.weights, float)
    if np.any(mw < 0) or np.any(nw < 0):
        raise MetricError("measures must be nonnegative")
    s0 = np.flatnonzero(g.grid.dirichlet_mask) if sigma0_nodes is None else np.asarray(sigma0_nodes)
    ms, ns = np.flatnonzero(mw), np.flatnonzero(nw)
    if len(s0) == 0 and abs(mw.sum() - nw.sum()) > 1e-12 * max(1.0, mw.sum()):
        raise MetricError("empty Dirichlet set with unbalanced measures")
    if len(ms) == 0 and len(ns) == 0:
        return TransportResult(0.0, [], {})
    _check_connected(g)
    involved = np.unique(np.concatenate([ms, ns]))
    D = dijkstra(g.matrix, directed=False, indices=involved)
    pos = {int(k): r for r, k in enumerate(involved)}
    C = D[np.ix_([pos[int(k)] for k in ms], ns)] if len(ns) else np.zeros((len(ms), 0))
    exits: dict[int, int] = {}
    if len(s0):
        d0, _, src = dijkstra(g.matrix, directed=False, indices=s0, min_only=True,
                              return_predecessors=True)
        to0_m, to0_n = d0[ms], d0[ns]
        exits = {int(k): int(src[k]) for k in involved}
        # rows: mu atoms + reservoir, columns: nu atoms + reservoir
        Cfull = np.zeros((len(ms) + 1, len(ns) + 1))
        Cfull[:len(ms), :len(ns)] = C
        Cfull[:len(ms), len(ns)] = to0_m
        Cfull[len(ms), :len(ns)] = to0_n
        sup = np.concatenate([mw[ms], [nw.sum()]])
        dem = np.concatenate([nw[ns], [mw.sum()]])
    else:
        Cfull, sup, dem = C, mw[ms], nw[ns]
    if not np.all(np.isfinite(Cfull)):
        raise MetricError("unreachable transport pair")
    W, flow = min_cost_transport(sup, dem, Cfull)
    rows = list(ms) + ([-1] if len(s0) else [])
    cols = list(ns) + ([-1] if len(s0) else [])
    plan = [(int(rows[r]), int(cols[c]), float(flow[r, c]))
            for r, c in zip(*np.nonzero(flow > 0)) if not (rows[r] == -1 and cols[c] == -1)]
    return TransportResult(W, plan, exits)


# ------------------------------------------------------------ audit

@dataclass
class AuditResult:
    W: float
    Z0: float
    gap: float  # Z0 - W
    passed: bool
    support_share: float
    transport: TransportResult


def maximal_metric_audit(sol, load: Optional[DiscreteLoad] = None, edges=None,
                         audit_tol: Optional[float] = None) -> AuditResult:
    """Transport distance of (f+, f-) under the metric of the solved v = id - w.

    ``edges`` defaults to the active pairs of the solution, on which (u, w) is
    two-point feasible; u is then 1-Lipschitz for the chain distance, so
    W >= <f, u>, while the strings give chains with l_v = |du|.
    """
    from .membrane import support_pattern

    load = sol.load if load is None else load
    g = build_metric_graph(sol.grid, w=sol.w, edges=sol.active_pairs if edges is None else edges)
    tr = kantorovich_sigma0(g, load.positive(), load.negative())
    tol = 1e-2 * abs(sol.Z0) if audit_tol is None else audit_tol
    gap = sol.Z0 - tr.W
    return AuditResult(tr.W, sol.Z0, gap, bool(abs(gap) <= tol), support_pattern(sol), tr)
