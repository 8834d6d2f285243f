"""Restarted, diagonally preconditioned primal-dual hybrid gradient for the truss program.

Saddle form: min_{x in K} max_y  c.x - y.(A x - b), with K the product of
rotated cones. One iteration is

    x+ = P_K(x - T (c - A^T y))
    y+ = y + S (b - A (2 x+ - x))

followed by over-relaxation ``z <- z + rho (z+ - z)``. T is constant on each
cone block so that P_K stays the Euclidean projection. Restarts follow the
KKT-error rule (sufficient / necessary / artificial decay) and update the
primal weight that trades T against S.

Every returned dual assignment is made exactly feasible by the scaling
(u, w) -> (s u, s^2 w), s = 1/sqrt(max_e q_e) with
q_e = (1/2 du^2 + <dw, dx>) / l_e^2. The reported dual objective is then a
true lower bound.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import ConicProgram, DualAssignment, two_point_residual
from .cones import project_rotated_cone

log = logging.getLogger(__name__)

OPTIMAL, MAX_ITER, NUMERICAL_FAILURE = "optimal", "max_iter", "numerical_failure"


class SolverError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolveOptions:
    gap_tol: float = 1e-6
    feas_tol: float = 1e-7
    max_iter: int = 200_000
    relaxation: float = 1.8
    check_every: int = 100
    primal_weight: float = 1.0
    restart_sufficient: float = 0.2
    restart_necessary: float = 0.8
    restart_artificial: float = 0.36
    trace_path: Optional[str] = None


@dataclass
class SolveReport:
    primal_objective: float
    dual_objective: float
    relative_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    status: str = OPTIMAL
    trace: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("primal_objective", "dual_objective", "relative_gap",
                                               "primal_residual", "dual_residual", "iterations", "status")}


def _cone_residual(prog: ConicProgram, y: np.ndarray) -> float:
    """Sup-norm distance of the dual slack c - A^T y to the cone, relative to 1 + |c|."""
    lam = prog.c - prog.A.T @ y
    m = prog.m
    pu, pv, px = project_rotated_cone(lam[:m], lam[m:2 * m], lam[2 * m:])
    dist = np.abs(lam - np.concatenate([pu, pv, px]))
    return float(dist.max(initial=0.0)) / (1.0 + float(np.abs(prog.c).max(initial=0.0)))


def certify(prog: ConicProgram, x: np.ndarray, dual: DualAssignment) -> SolveReport:
    """Objectives, relative gap and residuals recomputed from scratch."""
    x = np.asarray(x, dtype=float)
    y = prog.rows_from_dual(dual)
    pobj = prog.primal_objective(x)
    dobj = prog.dual_objective(dual)
    r = prog.A @ x - prog.b
    pres = float(np.abs(r).max(initial=0.0)) / (1.0 + float(np.abs(prog.b).max(initial=0.0)))
    return SolveReport(
        primal_objective=pobj,
        dual_objective=dobj,
        relative_gap=abs(pobj - dobj) / (1.0 + abs(pobj)),
        primal_residual=pres,
        dual_residual=_cone_residual(prog, y),
    )


def restore_feasibility(prog: ConicProgram, dual: DualAssignment) -> DualAssignment:
    """Scale (u, w) into the two-point feasible set."""
    q = (two_point_residual(dual, prog.grid, prog.pairs) + prog.pairs.lengths**2) / prog.pairs.lengths**2
    Q = float(q.max(initial=0.0))
    if Q <= 1.0:
        return dual
    return dual.scaled((1.0 - 4e-16) / math.sqrt(Q))


class _Preconditioner:
    def __init__(self, prog: ConicProgram):
        m = prog.m
        absA = abs(prog.A)
        rs = np.asarray(absA.sum(axis=1)).ravel()
        cs = np.asarray(absA.sum(axis=0)).ravel()
        rs[rs == 0] = 1.0
        blk = np.maximum(np.maximum(cs[:m], cs[m:2 * m]), cs[2 * m:])
        blk[blk == 0] = 1.0
        self.T = np.tile(1.0 / blk, 3)
        self.S = 1.0 / rs


def solve(prog: ConicProgram, opts: SolveOptions | None = None, warm_start=None, **kw):
    """Solve the assembled program; returns (x, DualAssignment, SolveReport).

    ``warm_start`` is an optional (x, y) pair in program coordinates. Keyword
    arguments override fields of ``opts``.
    """
    opts = SolveOptions(**{**(opts.__dict__ if opts else {}), **kw})
    A, b, c, m = prog.A, prog.b, prog.c, prog.m
    AT = A.T.tocsr()
    pre = _Preconditioner(prog)
    rho = opts.relaxation

    if warm_start is not None:
        x, y = (np.array(v, dtype=float) for v in warm_start)
    else:
        x, y = np.zeros(3 * m), np.zeros(len(b))
    omega = opts.primal_weight

    def project(z):
        z[:m], z[m:2 * m], z[2 * m:] = project_rotated_cone(z[:m], z[m:2 * m], z[2 * m:])
        return z

    def kkt(xc, yc):
        r = A @ xc - b
        lam = c - AT @ yc
        pu, pv, px = project_rotated_cone(lam[:m], lam[m:2 * m], lam[2 * m:])
        dres = lam - np.concatenate([pu, pv, px])
        gap = c @ xc - b @ yc
        return math.sqrt(omega**2 * (r @ r) + (dres @ dres) / omega**2 + gap * gap)

    def finish(xc, yc, it, status):
        dual = restore_feasibility(prog, prog.dual_from_rows(yc))
        rep = certify(prog, xc, dual)
        rep.iterations, rep.status, rep.trace = it, status, trace
        return rep, dual

    trace: list = []
    x_sum, y_sum, n_avg = np.zeros_like(x), np.zeros_like(y), 0
    x_anchor, y_anchor = x.copy(), y.copy()
    k_anchor, k_prev, it_anchor = kkt(x, y), math.inf, 0

    if not np.any(b):
        # zero load: x = 0 is optimal, y = 0 attains the same value
        x0 = np.zeros(3 * m)
        rep, dual = finish(x0, np.zeros(len(b)), 0, OPTIMAL)
        return x0, dual, rep

    it, converged = 0, False
    for it in range(1, opts.max_iter + 1):
        x_hat = project(x - (pre.T / omega) * (c - AT @ y))
        y_hat = y + (pre.S * omega) * (b - A @ (2.0 * x_hat - x))
        x += rho * (x_hat - x)
        y += rho * (y_hat - y)
        x_sum += x
        y_sum += y
        n_avg += 1

        if it % opts.check_every and it != opts.max_iter:
            continue
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            rep = SolveReport(math.nan, math.nan, math.nan, math.nan, math.nan, it, NUMERICAL_FAILURE, trace)
            raise SolverError("non-finite iterate", rep)
        x_avg, y_avg = x_sum / n_avg, y_sum / n_avg
        k_cur, k_avg = kkt(x, y), kkt(x_avg, y_avg)
        cand = (x_avg, y_avg, k_avg) if k_avg < k_cur else (x, y, k_cur)
        rep, _ = finish(cand[0], cand[1], it, OPTIMAL)
        trace.append((it, rep.relative_gap, rep.primal_residual, rep.dual_residual))
        if (rep.relative_gap <= opts.gap_tol and rep.primal_residual <= opts.feas_tol
                and rep.dual_residual <= opts.feas_tol):
            x, y = cand[0].copy(), cand[1].copy()
            converged = True
            break
        kc = cand[2]
        if (kc <= opts.restart_sufficient * k_anchor
                or (kc <= opts.restart_necessary * k_anchor and kc > k_prev)
                or it - it_anchor >= opts.restart_artificial * it):
            x, y = cand[0].copy(), cand[1].copy()
            dx, dy = np.linalg.norm(x - x_anchor), np.linalg.norm(y - y_anchor)
            if dx > 1e-12 and dy > 1e-12:
                omega = math.exp(0.5 * math.log(dy / dx) + 0.5 * math.log(omega))
            x_anchor, y_anchor = x.copy(), y.copy()
            x_sum[:] = 0.0
            y_sum[:] = 0.0
            n_avg = 0
            k_anchor, k_prev, it_anchor = kkt(x, y), math.inf, it
        else:
            k_prev = kc

    status = OPTIMAL if converged else MAX_ITER
    rep, dual = finish(x, y, it, status)
    if status == MAX_ITER:
        log.warning("PDHG stopped at max_iter=%d: gap %.2e, pres %.2e, dres %.2e",
                    it, rep.relative_gap, rep.primal_residual, rep.dual_residual)
    if opts.trace_path:
        write_trace(opts.trace_path, trace)
    return x, dual, rep


def write_trace(path: str, trace: list) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "relative_gap", "primal_residual", "dual_residual"])
        wr.writerows(trace)
