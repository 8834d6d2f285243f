"""Command-line driver: ``optimembrane {solve,fmd,compare,metric,geodesic,oracle,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import fmd, io, metric, oracle
from .geometry import discretize_load
from .membrane import a_priori_bounds, check_optimality, solve_om, support_pattern
from .solver import SolveOptions

log = logging.getLogger("optimembrane")

COMMANDS = ("solve", "fmd", "compare", "metric", "geodesic", "oracle", "check")


def _result(kind: str, **payload) -> dict:
    return {"schema": io.RESULT_SCHEMA, "kind": kind, **payload}


def _solve(cfg: io.RunConfig, out: Path):
    grid = cfg.grid()
    load = discretize_load(grid, cfg.load.build())
    s = cfg.solver
    opts = SolveOptions(max_iter=s.max_iter, trace_path=str(out / "trace.csv") if cfg.trace else None)
    sol = solve_om(grid, load, pairs=cfg.pairs, column_generation=cfg.column_generation,
                   gap_tol=s.gap_tol, feas_tol=s.feas_tol, violation_tol=s.violation_tol,
                   max_rounds=s.max_rounds, batch=s.batch, solver_opts=opts)
    return sol


def _solution(cfg: io.RunConfig, out: Path):
    if cfg.solution:
        return io.load_solution(cfg.solution)
    return _solve(cfg, out)


def cmd_solve(cfg, out):
    sol = _solve(cfg, out)
    io.save_solution(out / "solution.json", sol)
    io.atomic_write(out / "sigma.svg", io.export_svg(sol))
    io.atomic_write(out / "u.csv", io.nodal_csv(sol))
    io.write_json(out / "summary.json", _result(
        "solve", Z0=sol.Z0, dual_value=sol.dual_value, gap=sol.gap, report=sol.report.as_dict(),
        rounds=[r.__dict__ for r in sol.rounds], bounds=a_priori_bounds(sol),
        support_share=support_pattern(sol), absorbed_load=sol.load.absorbed))
    print(f"Z0 = {sol.Z0:.10g}  lower bound = {sol.dual_value:.10g}  gap = {sol.gap:.2e}")
    return 0


def cmd_fmd(cfg, out):
    grid = cfg.grid()
    load = discretize_load(grid, cfg.load.build())
    Z, rays = fmd.solve_fmd(grid, None, load)
    io.write_json(out / "fmd.json", _result(
        "fmd", Z=Z, rays=[{"from": r.source, "to": r.target, "weight": r.weight} for r in rays]))
    print(f"Z_fmd = {Z:.10g}")
    return 0


def cmd_compare(cfg, out):
    grid = cfg.grid()
    load = discretize_load(grid, cfg.load.build())
    s = cfg.solver
    res = fmd.compare_fmd_om(grid, None, load, gap_tol=s.gap_tol, pairs=cfg.pairs,
                             column_generation=cfg.column_generation, feas_tol=s.feas_tol)
    res["ridge"] = [{"node": k, "at": grid.nodes[k], "on_ridge": v} for k, v in res["ridge"].items()]
    io.write_json(out / "compare.json", _result("compare", **res))
    print(f"Z_fmd = {res['Z_fmd']:.10g}  Z0 = {res['Z0']:.10g}  equal = {res['equal']}")
    return 0


def _node(sol, p, default):
    return default if p is None else sol.grid.index_of(tuple(p), tol=0.5 * sol.grid.h)


def _graph(cfg, sol):
    edges = cfg.metric.edges or sol.active_pairs
    if not cfg.metric.edges and not metric.is_connected(sol.grid, edges):
        edges = "full"  # a loaded file keeps only the string pairs
    return metric.build_metric_graph(sol.grid, w=sol.w, edges=edges)


def cmd_metric(cfg, out):
    sol = _solution(cfg, out)
    g = _graph(cfg, sol)
    src = _node(sol, cfg.metric.source, int(sol.load.support[0]) if len(sol.load.support) else 0)
    dist = metric.c_v_distance(g, src)
    rows = ["x,y,c"] + [f"{x!r},{y!r},{d!r}" for (x, y), d in zip(sol.grid.nodes.tolist(), dist.tolist())]
    io.atomic_write(out / "distance.csv", "\n".join(rows) + "\n")
    audit = metric.maximal_metric_audit(sol, edges=g.edges)
    io.write_json(out / "audit.json", _result(
        "metric", source=src, W=audit.W, Z0=audit.Z0, gap=audit.gap, passed=audit.passed,
        support_share=audit.support_share, clamped_edges=g.clamped,
        plan=[{"from": a, "to": b, "mass": m} for a, b, m in audit.transport.plan]))
    print(f"W = {audit.W:.10g}  Z0 = {audit.Z0:.10g}  gap = {audit.gap:.3e}")
    return 0


def cmd_geodesic(cfg, out):
    sol = _solution(cfg, out)
    g = _graph(cfg, sol)
    if cfg.metric.target is None:
        raise io.ConfigError("geodesic needs metric.target")
    a = _node(sol, cfg.metric.source, int(sol.load.support[0]) if len(sol.load.support) else 0)
    b = _node(sol, cfg.metric.target, None)
    path, cost = metric.geodesic(g, a, b)
    cum = np.concatenate([[0.0], np.cumsum([metric.path_cost(g, path[k:k + 2]) for k in range(len(path) - 1)])])
    io.atomic_write(out / "geodesic.csv", io.polyline_csv(sol.grid.nodes[path], cum))
    print(f"c_v = {cost:.10g} over {len(path) - 1} edge(s)")
    return 0


def cmd_oracle(cfg, out):
    oc = cfg.oracle
    if oc.kind in ("radial_uniform", "radial_dirac"):
        rs = oracle.radial_uniform(oc.R) if oc.kind == "radial_uniform" else oracle.radial_dirac(oc.R)
        r = np.linspace(0.0, oc.R, 101)
        rr = np.where(r > 0, r, np.nan)
        io.write_json(out / "oracle.json", _result(
            oc.kind, R=rs.R, D=rs.D, Z0=rs.Z0, r=r, u=rs.u(r), w=rs.w(r),
            alpha=[None if not math.isfinite(a) else a for a in rs.alpha(rr).tolist()]))
        print(f"D = {rs.D:.12g}  Z0 = {rs.Z0:.12g}")
        return 0
    if oc.kind != "one_force":
        raise io.ConfigError(f"unknown oracle kind {oc.kind!r}")
    grid = cfg.grid()
    sol1 = oracle.one_force(grid.domain, oc.x0, grid.sigma0)
    io.write_json(out / "oracle.json", _result(
        "one_force", x0=sol1.x0, y0=sol1.y0, d0=sol1.d0, case=sol1.case, energy=sol1.energy,
        rho=[{"at": p, "weight": w} for p, w in zip(sol1.points, sol1.weights)],
        Pi=sol1.Pi_entries, pi=sol1.pi_entries))
    sol = oracle.inject(sol1, grid)
    io.save_solution(out / "solution.json", sol)
    print(f"energy = {sol1.energy:.12g}  (case {sol1.case})")
    return 0


def cmd_check(cfg, out):
    if not cfg.solution:
        raise io.ConfigError("check needs a solution file (--solution or config key 'solution')")
    sol = io.load_solution(cfg.solution)
    res = check_optimality(sol, tol=cfg.check_tol)
    io.write_json(out / "check.json", _result("check", tol=cfg.check_tol, **res))
    print(json.dumps(res))
    return 0 if res["passed"] else 1


HANDLERS = {"solve": cmd_solve, "fmd": cmd_fmd, "compare": cmd_compare, "metric": cmd_metric,
            "geodesic": cmd_geodesic, "oracle": cmd_oracle, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optimembrane", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--tol", type=float, help="relative duality gap tolerance (solver.gap_tol)")
    p.add_argument("--pairs", help="candidate pairs: full | radius=R | knn=K")
    p.add_argument("--no-colgen", action="store_true", help="solve on all candidate pairs at once")
    p.add_argument("--trace", action="store_true", help="write the solver convergence trace")
    p.add_argument("--solution", help="input solution file for check / metric / geodesic")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = io.load_config(args.config)
        if args.tol is not None:
            cfg.solver.gap_tol = args.tol
        if args.pairs:
            cfg.pairs = args.pairs
        if args.no_colgen:
            cfg.column_generation = False
        if args.trace:
            cfg.trace = True
        if args.solution:
            cfg.solution = args.solution
        out = out or Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out)
    except Exception as exc:  # every module error becomes a machine-readable report
        out = out or Path("out")
        try:
            io.write_json(out / "error.json", io.error_report(args.command, exc))
        except OSError:
            pass
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
