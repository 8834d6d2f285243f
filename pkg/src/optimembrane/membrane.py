"""Optimal membrane pipeline: column generation, truss extraction and optimality checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (ConicProgram, DualAssignment, assemble, monotonicity_gap,
                       two_point_residual)
from .geometry import (DiscreteLoad, GeometryError, Grid, LoadSpec, PairSet, build_pairs,
                       discretize_load, parse_strategy)
from .solver import SolveOptions, SolveReport, SolverError, certify, solve

log = logging.getLogger(__name__)

ALPHA_SUPPORT = 1e-8
PRUNE = 1e-6


class MembraneError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrussMeasure:
    """String measures on pairs: Pi >= 0, signed pi, and alpha = pi / Pi on the support."""

    pair_index: np.ndarray
    Pi: np.ndarray
    pi: np.ndarray
    alpha: np.ndarray  # nan where Pi is below the support threshold
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.pair_index)

    @classmethod
    def from_values(cls, Pi, pi, pair_index=None) -> "TrussMeasure":
        Pi = np.maximum(np.asarray(Pi, dtype=float), 0.0)
        pi = np.asarray(pi, dtype=float)
        idx = np.arange(len(Pi)) if pair_index is None else np.asarray(pair_index)
        if len(Pi) == 0:
            return cls(idx, Pi, pi, np.zeros(0))
        top = Pi.max(initial=0.0)
        on = Pi > ALPHA_SUPPORT * top if top > 0 else np.zeros(len(Pi), bool)
        alpha = np.full(len(Pi), np.nan)
        alpha[on] = pi[on] / Pi[on]
        top_pi = np.abs(pi).max(initial=0.0)
        flagged = np.flatnonzero(~on & (np.abs(pi) > ALPHA_SUPPORT * top_pi))
        return cls(idx, Pi, pi, alpha, flagged)

    def pruned(self, rel: float = PRUNE) -> "TrussMeasure":
        top = self.Pi.max(initial=0.0)
        keep = self.Pi >= rel * top if top > 0 else np.zeros(len(self.Pi), bool)
        return TrussMeasure(self.pair_index[keep], self.Pi[keep], self.pi[keep], self.alpha[keep])


@dataclass
class RoundRecord:
    active: int
    upper: float  # primal value of the restricted problem
    restricted_dual: float
    lower: float  # dual bound certified on the whole candidate set
    max_violation: float
    iterations: int


@dataclass
class MembraneSolution:
    grid: Grid
    load: DiscreteLoad
    active_pairs: PairSet
    truss: TrussMeasure
    u: np.ndarray
    w: np.ndarray
    Z0: float
    dual_value: float
    report: SolveReport
    rounds: list = field(default_factory=list)
    candidates: Optional[str] = None

    @property
    def dual(self) -> DualAssignment:
        return DualAssignment(self.u, self.w)

    @property
    def gap(self) -> float:
        return (self.Z0 - self.dual_value) / (1.0 + abs(self.Z0))

    @property
    def string_pairs(self) -> PairSet:
        return self.active_pairs.subset(self.truss.pair_index)


def energy_J(truss: TrussMeasure, pairs: PairSet) -> float:
    """sum l_e (1 + alpha_e^2 / 2) Pi_e, infinite when pi charges a pair with Pi = 0."""
    L = pairs.lengths[truss.pair_index]
    Pi, pi = truss.Pi, truss.pi
    if np.any((Pi <= 0) & (pi != 0)):
        return math.inf
    on = Pi > 0
    return float(np.sum(L * Pi) + np.sum(L[on] * pi[on] ** 2 / (2.0 * Pi[on])))


def equipartition_terms(truss: TrussMeasure, pairs: PairSet) -> tuple[float, float]:
    """(sum l Pi, sum l alpha^2 Pi / 2); equal at optimality."""
    L = pairs.lengths[truss.pair_index]
    on = truss.Pi > 0
    return float(np.sum(L * truss.Pi)), float(np.sum(L[on] * truss.pi[on] ** 2 / (2 * truss.Pi[on])))


def rescale_stress(Pi: np.ndarray, pi: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Best multiple s Pi for fixed pi.

    Scaling Pi keeps in-plane equilibrium (homogeneous rows) and minimizes
    s A + B / s at s = sqrt(B / A), which also equalizes both terms.
    """
    on = Pi > 0
    A = float(np.sum(L * Pi))
    B = float(np.sum(L[on] * pi[on] ** 2 / (2 * Pi[on])))
    if A <= 0 or B <= 0:
        return Pi
    return Pi * math.sqrt(B / A)


def compliance_at_mass(Z0: float, m: float, d: int = 2) -> float:
    if not m > 0:
        raise ValueError("mass must be positive")
    return Z0 * Z0 / (4.0 * m * d)


def _pair_keys(pairs: PairSet, n: int) -> np.ndarray:
    return pairs.i * n + pairs.j


def _violation_ratio(dual: DualAssignment, grid: Grid, pairs: PairSet) -> np.ndarray:
    return two_point_residual(dual, grid, pairs) / pairs.lengths**2 + 1.0


def _scale_to(dual: DualAssignment, q_max: float) -> DualAssignment:
    return dual if q_max <= 1.0 else dual.scaled((1.0 - 4e-16) / math.sqrt(q_max))


def solve_om(grid: Grid, load, pairs="full", column_generation: bool = True,
             gap_tol: float = 1e-6, feas_tol: float = 1e-7, violation_tol: Optional[float] = None,
             max_rounds: int = 50, batch: int = 1000, start_radius: Optional[float] = None,
             solver_opts: Optional[SolveOptions] = None) -> MembraneSolution:
    """Solve the discrete membrane problem on ``grid``.

    ``pairs`` (a strategy or a PairSet) is the candidate set. With column
    generation the restricted problem starts on pairs of length <= 3h and
    grows by the ``batch`` most violated candidates per round; the final
    (u, w) is feasible for every candidate, so ``dual_value`` is a lower
    bound and ``Z0`` an upper bound for the problem on the whole candidate set.
    """
    if not np.any(grid.dirichlet_mask):
        raise MembraneError("Dirichlet set contains no grid node")
    if isinstance(load, LoadSpec):
        load = discretize_load(grid, load)
    universe = pairs if isinstance(pairs, PairSet) else build_pairs(grid, pairs)
    label = None if isinstance(pairs, PairSet) else str(pairs)
    violation_tol = 0.5 * gap_tol if violation_tol is None else violation_tol
    inner_gap = 0.5 * gap_tol if column_generation else gap_tol
    opts = SolveOptions(**{**(solver_opts.__dict__ if solver_opts else {}),
                           "gap_tol": inner_gap, "feas_tol": feas_tol})

    n = grid.n
    if column_generation:
        r0 = 3 * grid.h if start_radius is None else start_radius
        active = universe.subset(universe.lengths <= r0 * (1 + 1e-12))
        if len(active) == 0 or _disconnected(grid, active):
            active = build_pairs(grid, ("radius", r0))
            active = _intersect(active, universe, n)
            if len(active) == 0:
                active = universe
    else:
        active = universe
    ukeys = _pair_keys(universe, n)

    rounds: list[RoundRecord] = []
    warm = None
    best_lower = -math.inf
    for rnd in range(max_rounds if column_generation else 1):
        prog = assemble(grid, active, load)
        x, dual, rep = solve(prog, opts, warm_start=warm)
        if rep.status != "optimal":
            log.warning("restricted solve ended with status %s", rep.status)
        q = _violation_ratio(dual, grid, universe)
        q_max = float(q.max(initial=0.0))
        lower = rep.dual_objective / math.sqrt(q_max) if q_max > 1 else rep.dual_objective
        best_lower = max(best_lower, lower)
        rounds.append(RoundRecord(len(active), rep.primal_objective, rep.dual_objective, lower,
                                  q_max - 1.0, rep.iterations))
        log.info("round %d: %d pairs, Z %.8f, lower %.8f, violation %.2e",
                 rnd, len(active), rep.primal_objective, lower, q_max - 1.0)
        if not column_generation:
            break
        akeys = set(_pair_keys(active, n).tolist())
        viol = np.flatnonzero(q > 1.0 + violation_tol)
        viol = viol[[k not in akeys for k in ukeys[viol].tolist()]] if len(viol) else viol
        closed = (rep.primal_objective - lower) <= gap_tol * (1 + abs(rep.primal_objective))
        if len(viol) == 0:
            if closed or opts.gap_tol < 1e-3 * gap_tol:
                break
            opts = SolveOptions(**{**opts.__dict__, "gap_tol": 0.5 * opts.gap_tol})
            warm = (x, prog.rows_from_dual(dual))
            continue
        top = viol[np.argsort(-q[viol], kind="stable")[:batch]]
        new_active = PairSet.from_indices(grid, np.concatenate([active.i, universe.i[top]]),
                                          np.concatenate([active.j, universe.j[top]]))
        warm = (_remap_x(x, active, new_active, n), prog.rows_from_dual(dual))
        active = new_active
    else:
        log.warning("column generation did not converge in %d rounds", max_rounds)
        if column_generation:
            raise MembraneError(f"column generation did not converge in {max_rounds} rounds")

    m = len(active)
    t, Pi, pi = x[:m], x[m:2 * m], x[2 * m:]
    Pi = np.maximum(Pi, 0.0)
    pi = np.where(Pi > 0, pi, 0.0)  # cone rounding leaves |pi| ~ 1e-17 where Pi = 0
    Pi = rescale_stress(Pi, pi, active.lengths)
    truss = TrussMeasure.from_values(Pi, pi)
    final_dual = _scale_to(dual, q_max)
    xr = np.concatenate([pi**2 / (2 * np.where(Pi > 0, Pi, 1.0)), Pi, pi])
    report = certify(prog, xr, final_dual)
    report.iterations = sum(r.iterations for r in rounds)
    report.status = rep.status
    Z0 = energy_J(truss, active)
    return MembraneSolution(grid, load, active, truss, final_dual.u, final_dual.w, Z0,
                            prog.dual_objective(final_dual), report, rounds, label)


def _disconnected(grid: Grid, pairs: PairSet) -> bool:
    from .geometry import ensure_connected
    try:
        ensure_connected(grid, pairs)
    except GeometryError:
        return True
    return False


def _intersect(a: PairSet, b: PairSet, n: int) -> PairSet:
    return a.subset(np.isin(_pair_keys(a, n), _pair_keys(b, n)))


def _remap_x(x: np.ndarray, old: PairSet, new: PairSet, n: int) -> np.ndarray:
    m_old, m_new = len(old), len(new)
    pos = np.searchsorted(_pair_keys(new, n), _pair_keys(old, n))
    out = np.zeros(3 * m_new)
    for blk in range(3):
        out[blk * m_new + pos] = x[blk * m_old:(blk + 1) * m_old]
    return out


# ------------------------------------------------------------ verification

def all_pairs(grid: Grid) -> PairSet:
    return build_pairs(grid, "full")


def check_optimality(sol: MembraneSolution, tol: float = 1e-6, pairs: Optional[PairSet] = None) -> dict:
    """Residuals of the five two-point optimality conditions.

    (i) boundary values, (ii) admissibility rows, (iii) two-point feasibility
    over ``pairs`` (default: every grid pair), (iv) alpha against the slope of
    u and (v) tightness of the two-point inequality, both on the truss support.
    """
    g = sol.grid
    u, w = sol.u, sol.w
    res = {}
    res["i_boundary"] = float(max(np.abs(u[g.dirichlet_mask]).max(initial=0.0),
                                  np.abs(w[g.boundary_mask]).max(initial=0.0)))
    sp = sol.string_pairs
    tr = sol.truss
    trans = np.zeros(g.n)
    np.add.at(trans, sp.j, tr.pi)
    np.add.at(trans, sp.i, -tr.pi)
    trans -= sol.load.weights
    plane = np.zeros((g.n, 2))
    np.add.at(plane, sp.j, tr.Pi[:, None] * sp.directions)
    np.add.at(plane, sp.i, -tr.Pi[:, None] * sp.directions)
    neg = float(np.maximum(-tr.Pi, 0.0).max(initial=0.0))
    res["ii_admissibility"] = float(max(np.abs(trans[g.free]).max(initial=0.0),
                                        np.abs(plane[g.interior]).max(initial=0.0), neg))
    pairs = all_pairs(g) if pairs is None else pairs
    res["iii_two_point"] = float(max(0.0, _chunked_max(sol.dual, g, pairs)))
    on = ~np.isnan(tr.alpha)
    slope = (u[sp.j] - u[sp.i]) / sp.lengths
    res["iv_alpha"] = float(np.abs(tr.alpha[on] - slope[on]).max(initial=0.0))
    tp = two_point_residual(sol.dual, g, sp)
    res["v_tightness"] = float(np.abs(tp[on]).max(initial=0.0))
    res["passed"] = all(v <= tol for k, v in res.items())
    return res


def _chunked_max(dual: DualAssignment, grid: Grid, pairs: PairSet, chunk: int = 2_000_000) -> float:
    out = -math.inf
    for s in range(0, len(pairs), chunk):
        sub = PairSet(pairs.i[s:s + chunk], pairs.j[s:s + chunk], pairs.lengths[s:s + chunk],
                      pairs.directions[s:s + chunk])
        out = max(out, float(two_point_residual(dual, grid, sub).max(initial=-math.inf)))
    return out


def a_priori_bounds(sol: MembraneSolution, pairs: Optional[PairSet] = None) -> dict:
    """Worst ratios for |w| <= R and |u_y - u_x| <= sqrt(2R l) (<= 1 when the bounds hold)."""
    R = sol.grid.domain.diameter
    pairs = sol.active_pairs if pairs is None else pairs
    du = np.abs(sol.u[pairs.j] - sol.u[pairs.i])
    return {
        "w_over_R": float(np.hypot(*sol.w.T).max(initial=0.0) / R),
        "du_over_bound": float((du / np.sqrt(2 * R * pairs.lengths)).max(initial=0.0)),
        "monotonicity_min": float((monotonicity_gap(sol.dual, sol.grid, pairs) / pairs.lengths**2).min(initial=0.0)),
    }


def support_pattern(sol: MembraneSolution, rel: float = 1e-4) -> float:
    """Share of the pruned Pi-mass carried by pairs with both ends in boundary or load support."""
    tr = sol.truss.pruned(rel)
    if len(tr) == 0:
        return 1.0
    g = sol.grid
    special = g.boundary_mask | (sol.load.weights != 0)
    sp = sol.active_pairs
    ok = special[sp.i[tr.pair_index]] & special[sp.j[tr.pair_index]]
    return float(tr.Pi[ok].sum() / tr.Pi.sum())


def rasterize(sol: MembraneSolution) -> dict:
    """Accumulate sigma_Pi and lambda_pi on the lattice cells x + hQ.

    Each string is cut at the cell boundaries; a piece of length s adds
    Pi s tau (x) tau to its cell tensor and pi s tau to its cell vector.
    """
    g, h = sol.grid, sol.grid.h
    cells: dict[tuple[int, int], int] = {}
    sig, lam = [], []
    sp = sol.string_pairs
    tr = sol.truss
    for e in range(len(tr)):
        a, b = g.nodes[sp.i[e]], g.nodes[sp.j[e]]
        tau = sp.directions[e]
        ts = {0.0, 1.0}
        for axis in (0, 1):
            if abs(b[axis] - a[axis]) > 0:
                lo, hi = sorted((a[axis], b[axis]))
                for k in range(int(math.floor(lo / h - 0.5)), int(math.ceil(hi / h + 0.5)) + 1):
                    t = ((k + 0.5) * h - a[axis]) / (b[axis] - a[axis])
                    if 0 < t < 1:
                        ts.add(t)
        ts = np.array(sorted(ts))
        lens = np.diff(ts) * sp.lengths[e]
        mids = a + 0.5 * (ts[1:] + ts[:-1])[:, None] * (b - a)
        for s, p in zip(lens, mids):
            key = tuple(np.round(p / h).astype(int).tolist())
            if key not in cells:
                cells[key] = len(sig)
                sig.append(np.zeros((2, 2)))
                lam.append(np.zeros(2))
            k = cells[key]
            sig[k] += tr.Pi[e] * s * np.outer(tau, tau)
            lam[k] += tr.pi[e] * s * tau
    keys = list(cells)
    return {
        "centers": np.array(keys, dtype=float).reshape(-1, 2) * h,
        "sigma": np.array(sig).reshape(-1, 2, 2),
        "lam": np.array(lam).reshape(-1, 2),
    }
